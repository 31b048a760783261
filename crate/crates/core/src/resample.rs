//! Windowed-sinc interpolation shared by the channel simulator and the mirrors.
//!
//! Every Doppler branch in this crate is an affine time warp: output sample
//! `n` reads the input at fractional index `alpha * n + offset`. The kernel is
//! a Kaiser-windowed sinc tabulated on a fine phase grid.

use std::sync::OnceLock;

pub const KERNEL_TAPS: usize = 32;
pub const KERNEL_PHASES: usize = 2048;
const KAISER_BETA: f64 = 8.0;

#[derive(Debug, Clone)]
pub struct SincKernel {
    taps: usize,
    phases: usize,
    /// `phases` rows of `taps` coefficients; row `r` is for fractional offset `r / phases`.
    table: Vec<f64>,
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else {
        let x = std::f64::consts::PI * t;
        x.sin() / x
    }
}

impl SincKernel {
    pub fn new(taps: usize, phases: usize, beta: f64) -> Self {
        assert!(taps >= 2 && taps % 2 == 0, "tap count must be even");
        assert!(phases >= 1);
        let half = (taps / 2) as f64;
        let norm = bessel_i0(beta);
        let mut table = Vec::with_capacity(taps * phases);
        for r in 0..phases {
            let mu = r as f64 / phases as f64;
            for j in 0..taps {
                let k = j as f64 - (half - 1.0);
                let t = mu - k;
                let ratio = (t / half).clamp(-1.0, 1.0);
                let w = bessel_i0(beta * (1.0 - ratio * ratio).sqrt()) / norm;
                table.push(sinc(t) * w);
            }
        }
        Self { taps, phases, table }
    }

    /// The 64-tap, 4096-phase kernel used throughout the crate.
    pub fn shared() -> &'static SincKernel {
        static KERNEL: OnceLock<SincKernel> = OnceLock::new();
        KERNEL.get_or_init(|| SincKernel::new(KERNEL_TAPS, KERNEL_PHASES, KAISER_BETA))
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    /// Band-limited value of `x` at fractional index `pos`; zero outside the data.
    pub fn interpolate(&self, x: &[f64], pos: f64) -> f64 {
        let base = pos.floor();
        let mut phase = ((pos - base) * self.phases as f64).round() as usize;
        let mut i = base as i64;
        if phase == self.phases {
            phase = 0;
            i += 1;
        }
        if phase == 0 {
            return if i >= 0 && (i as usize) < x.len() {
                x[i as usize]
            } else {
                0.0
            };
        }
        let start = i - (self.taps as i64 / 2 - 1);
        let row = &self.table[phase * self.taps..(phase + 1) * self.taps];
        let n = x.len() as i64;
        if start >= 0 && start + self.taps as i64 <= n {
            let s = start as usize;
            x[s..s + self.taps]
                .iter()
                .zip(row)
                .map(|(a, b)| a * b)
                .sum()
        } else {
            let mut acc = 0.0;
            for (j, h) in row.iter().enumerate() {
                let m = start + j as i64;
                if m >= 0 && m < n {
                    acc += x[m as usize] * h;
                }
            }
            acc
        }
    }

    /// `out[n] += gain * x(alpha * n + offset)` for every output sample whose
    /// read position touches the input support.
    pub fn accumulate_affine(&self, out: &mut [f64], x: &[f64], alpha: f64, offset: f64, gain: f64) {
        if x.is_empty() || gain == 0.0 {
            return;
        }
        let margin = self.taps as f64 / 2.0 + 1.0;
        let lo = -margin;
        let hi = x.len() as f64 + margin;
        let (n_lo, n_hi) = affine_range(alpha, offset, lo, hi, out.len());
        for (n, o) in out.iter_mut().enumerate().take(n_hi).skip(n_lo) {
            let pos = offset + alpha * n as f64;
            *o += gain * self.interpolate(x, pos);
        }
    }

    pub fn resample_affine(&self, x: &[f64], out_len: usize, alpha: f64, offset: f64, gain: f64) -> Vec<f64> {
        let mut out = vec![0.0; out_len];
        self.accumulate_affine(&mut out, x, alpha, offset, gain);
        out
    }
}

/// Output indices `n` in `[0, len)` for which `offset + alpha * n` falls in `[lo, hi]`.
fn affine_range(alpha: f64, offset: f64, lo: f64, hi: f64, len: usize) -> (usize, usize) {
    if alpha == 0.0 {
        return if offset >= lo && offset <= hi { (0, len) } else { (0, 0) };
    }
    let (a, b) = ((lo - offset) / alpha, (hi - offset) / alpha);
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let start = a.ceil().max(0.0);
    let end = (b.floor() + 1.0).min(len as f64);
    if end <= start {
        (0, 0)
    } else {
        (start as usize, end as usize)
    }
}
