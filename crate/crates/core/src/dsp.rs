//! FFT helpers: analytic cross-correlation and small spectral utilities.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Sizes made of small primes keep rustfft on its fast paths.
pub fn fft_size(min_len: usize) -> usize {
    let mut n = min_len.max(1);
    loop {
        let mut m = n;
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        if m == 1 {
            return n;
        }
        n += 1;
    }
}

fn spectrum(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    forward_plan(n).process(&mut buf);
    buf
}

/// Analytic (one-sided spectrum) version of a real sequence.
pub fn analytic(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = spectrum(x, n);
    one_sided(&mut spec);
    inverse_plan(n).process(&mut spec);
    let scale = 1.0 / n as f64;
    spec.iter().map(|c| c * scale).collect()
}

fn one_sided(spec: &mut [Complex64]) {
    let n = spec.len();
    let half = n / 2;
    for (k, c) in spec.iter_mut().enumerate() {
        if k == 0 || (n % 2 == 0 && k == half) {
            continue;
        } else if k < n.div_ceil(2) {
            *c *= 2.0;
        } else {
            *c = Complex64::new(0.0, 0.0);
        }
    }
}

/// Cross-correlates one long real signal against many short real replicas.
///
/// `correlate(q)[i]` is the analytic correlation `Σ_n y[n + lag] q[n]` with
/// `lag = i - (q.len() - 1)`, so the real part is the ordinary correlation and
/// the modulus is its envelope.
pub struct Correlator {
    n: usize,
    y_len: usize,
    y_spec: Vec<Complex64>,
    max_replica: usize,
}

impl Correlator {
    pub fn new(y: &[f64], max_replica: usize) -> Self {
        let n = fft_size(y.len() + max_replica.max(1));
        Self {
            n,
            y_len: y.len(),
            y_spec: spectrum(y, n),
            max_replica,
        }
    }

    pub fn correlate(&self, q: &[f64]) -> Vec<Complex64> {
        assert!(q.len() <= self.max_replica, "replica longer than planned");
        if q.is_empty() || self.y_len == 0 {
            return Vec::new();
        }
        let q_spec = spectrum(q, self.n);
        let mut c: Vec<Complex64> = self
            .y_spec
            .iter()
            .zip(&q_spec)
            .map(|(a, b)| a * b.conj())
            .collect();
        one_sided(&mut c);
        inverse_plan(self.n).process(&mut c);
        let scale = 1.0 / self.n as f64;
        let total = self.y_len + q.len() - 1;
        (0..total)
            .map(|i| {
                let lag = i as i64 - (q.len() as i64 - 1);
                let idx = if lag >= 0 { lag as usize } else { (self.n as i64 + lag) as usize };
                c[idx] * scale
            })
            .collect()
    }
}

/// Real linear cross-correlation via FFT with the same lag convention as
/// [`Correlator::correlate`].
pub fn xcorr_real(y: &[f64], q: &[f64]) -> Vec<f64> {
    if y.is_empty() || q.is_empty() {
        return Vec::new();
    }
    let n = fft_size(y.len() + q.len());
    let ys = spectrum(y, n);
    let qs = spectrum(q, n);
    let mut c: Vec<Complex64> = ys.iter().zip(&qs).map(|(a, b)| a * b.conj()).collect();
    inverse_plan(n).process(&mut c);
    let scale = 1.0 / n as f64;
    let total = y.len() + q.len() - 1;
    (0..total)
        .map(|i| {
            let lag = i as i64 - (q.len() as i64 - 1);
            let idx = if lag >= 0 { lag as usize } else { (n as i64 + lag) as usize };
            c[idx].re * scale
        })
        .collect()
}

/// Vertex offset of the parabola through three equally spaced samples, in
/// `[-0.5, 0.5]` when the middle sample is the largest.
pub fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}
