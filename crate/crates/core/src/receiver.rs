//! Post-mirror receiver: frame synchronization, coherent demodulation, an
//! RLS decision-feedback equalizer with a second-order PLL, and BER.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{median, parabolic_offset, Correlator};
use crate::error::{Error, Result};
use crate::measure::{lag_line, probe_pair, solve_lines, ProbeRef};
use crate::resample::SincKernel;
use crate::signal::PassbandSignal;
use crate::waveform::{gen_hfm, rrc_taps, symbol_center, Modulation, SegmentKind, SignalParams};

/// A synchronized frame on the transmitter's sample grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Synced {
    pub signal: PassbandSignal,
    /// Global delay `δ` and Doppler `a` in `z(t) ≈ G x((1 + a) t - δ)`.
    pub delay: f64,
    pub doppler: f64,
}

fn probe_peak(corr: &Correlator, z: &PassbandSignal, params: &SignalParams, probe: &ProbeRef) -> Result<f64> {
    let fs = z.sample_rate;
    let q = gen_hfm(params, probe.direction)?;
    let c = corr.correlate(&q.samples);
    let env: Vec<f64> = c.iter().map(|v| v.norm()).collect();
    // Index i holds lag (i - (q.len - 1)) / fs + z.t0.
    let first = z.t0 - (q.len() as f64 - 1.0) / fs;
    let half = 0.5 * params.guard_length;
    let lo = (((probe.start - half - first) * fs).floor().max(1.0)) as usize;
    let hi = (((probe.start + half - first) * fs).ceil().max(0.0) as usize).min(env.len().saturating_sub(2));
    if hi <= lo {
        return Err(Error::SyncMissing("probe search range outside the signal".into()));
    }
    let (i, peak) = env[lo..=hi]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, &v)| (lo + k, v))
        .unwrap();
    let floor = median(&env[lo..=hi]);
    if !(peak > 4.0 * floor) {
        return Err(Error::SyncMissing(format!(
            "{:?} probe peak {peak:.3e} not above floor {floor:.3e}",
            probe.direction
        )));
    }
    let d = parabolic_offset(env[i - 1], env[i], env[i + 1]);
    Ok(first + (i as f64 + d) / fs)
}

/// [`probe_peak`] on the stretch of `z` that can hold the probe's peak.
fn probe_peak_near(z: &PassbandSignal, params: &SignalParams, probe: &ProbeRef) -> Result<f64> {
    let fs = z.sample_rate;
    let reach = 0.5 * params.guard_length + 2.0 / fs;
    let index = |t: f64| (((t - z.t0) * fs).round().max(0.0) as usize).min(z.len());
    let lo = index(probe.start - reach);
    let hi = index(probe.start + params.probe_length_tg + reach);
    let part = PassbandSignal::new(z.samples[lo..hi].to_vec(), fs, z.t0 + lo as f64 / fs);
    let corr = Correlator::new(&part.samples, params.probe_samples() + 1);
    probe_peak(&corr, &part, params, probe)
}

/// Locate the frame's first and last probes in `z`, estimate the global
/// delay and Doppler they imply, and resample `z` onto the transmitter grid.
pub fn synchronize(z: &PassbandSignal, params: &SignalParams) -> Result<Synced> {
    let fs = params.sample_rate_fs;
    let (first, last) = probe_pair(params);
    let l1 = probe_peak_near(z, params, &first)?;
    let l2 = probe_peak_near(z, params, &last)?;
    let state = solve_lines(lag_line(params, &first, 0.0, l1), lag_line(params, &last, 0.0, l2))
        .ok_or_else(|| Error::SyncMissing("probe lag lines are parallel".into()))?;
    if !(state.doppler.abs() < 0.05 && state.delay.abs() < params.guard_length) {
        return Err(Error::SyncMissing(format!(
            "implausible global delay {:.3e} s / Doppler {:.3e}",
            state.delay, state.doppler
        )));
    }
    let len = params.segments(true).last().map_or(0, |s| s.end());
    let s = 1.0 + state.doppler;
    let samples = SincKernel::shared().resample_affine(&z.samples, len, 1.0 / s, (state.delay / s - z.t0) * fs, 1.0);
    Ok(Synced {
        signal: PassbandSignal::new(samples, fs, 0.0),
        delay: state.delay,
        doppler: state.doppler,
    })
}

/// Matched-filter symbol estimates with the pulse's own inter-symbol
/// interference and double-frequency leakage removed.
pub fn demodulate(z: &PassbandSignal, params: &SignalParams) -> Result<Vec<Complex64>> {
    let data = params
        .segments(true)
        .into_iter()
        .find(|s| s.kind == SegmentKind::Data)
        .ok_or_else(|| Error::SyncMissing("layout has no data segment".into()))?;
    let sps = params.samples_per_symbol();
    let g = rrc_taps(params.rolloff, sps, params.pulse_span);
    let half = g.len() / 2;
    let count = params.data_symbols();
    let last = symbol_center(data.start, sps, count.saturating_sub(1)) + half;
    if z.len() <= last || data.start < half {
        return Err(Error::SyncMissing(format!(
            "signal of {} samples does not cover the data segment",
            z.len()
        )));
    }
    let w = 2.0 * std::f64::consts::PI * params.carrier_fc / params.sample_rate_fs;
    let norm: f64 = g.iter().map(|v| v * v).sum();
    let first = data.start - half;
    let mixed: Vec<Complex64> = (first..=last)
        .map(|n| Complex64::from_polar(2.0 * z.samples[n], -w * n as f64))
        .collect();
    let matched: Vec<Complex64> = (0..count)
        .map(|i| {
            let start = symbol_center(data.start, sps, i) - half - first;
            let acc: Complex64 = mixed[start..start + g.len()].iter().zip(&g).map(|(m, gv)| m * gv).sum();
            acc / norm
        })
        .collect();

    // Matched outputs obey m_i = Σ_j G_ij s_j + H_ij conj(s_j), where G is the
    // pulse autocorrelation and H the leakage of the image at twice the
    // carrier. Both are nearly diagonal, so Jacobi iterations converge fast.
    let span = g.len().div_ceil(sps);
    let gram = |d: usize| -> f64 {
        let lag = d * sps;
        if lag >= g.len() {
            return 0.0;
        }
        g[..g.len() - lag].iter().zip(&g[lag..]).map(|(a, b)| a * b).sum::<f64>() / norm
    };
    let gcoef: Vec<f64> = (0..=span).map(gram).collect();
    // H_ij = e^{-2jω(c_i - half)} Σ_k g_k g_{k + (i - j) sps} e^{-2jωk}.
    let hcoef: Vec<Complex64> = (-(span as i64)..=span as i64)
        .map(|d| {
            let shift = d * sps as i64;
            let mut acc = Complex64::new(0.0, 0.0);
            for (k, gk) in g.iter().enumerate() {
                let m = k as i64 + shift;
                if m >= 0 && (m as usize) < g.len() {
                    acc += Complex64::from_polar(1.0, -2.0 * w * k as f64) * (gk * g[m as usize]);
                }
            }
            acc / norm
        })
        .collect();
    let band: Vec<Vec<(usize, Complex64)>> = (0..count)
        .map(|i| {
            let lo = i.saturating_sub(span);
            let hi = (i + span).min(count - 1);
            let phase = Complex64::from_polar(1.0, -2.0 * w * (symbol_center(data.start, sps, i) - half) as f64);
            (lo..=hi)
                .map(|j| (j, phase * hcoef[(i as i64 - j as i64 + span as i64) as usize]))
                .collect()
        })
        .collect();
    let mut s = matched.clone();
    for _ in 0..50 {
        let prev = s.clone();
        let mut change = 0.0f64;
        for i in 0..count {
            let mut acc = matched[i];
            for &(j, h) in &band[i] {
                if j != i {
                    acc -= prev[j] * gcoef[i.abs_diff(j)];
                }
                acc -= h * prev[j].conj();
            }
            s[i] = acc / gcoef[0];
            change = change.max((s[i] - prev[i]).norm());
        }
        if change < 1e-13 {
            break;
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DfeConfig {
    pub feedforward_taps: usize,
    pub feedback_taps: usize,
    pub forgetting_lambda: f64,
    pub training_length: usize,
    pub pll_proportional: f64,
    pub pll_integral: f64,
}

impl Default for DfeConfig {
    fn default() -> Self {
        Self {
            feedforward_taps: 24,
            feedback_taps: 12,
            forgetting_lambda: 0.995,
            training_length: 200,
            pll_proportional: 0.05,
            pll_integral: 0.005,
        }
    }
}

impl DfeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feedforward_taps == 0 {
            return Err(Error::config("dfe.feedforward_taps", "must be at least 1"));
        }
        if self.feedback_taps == 0 {
            return Err(Error::config("dfe.feedback_taps", "must be at least 1"));
        }
        if !(self.forgetting_lambda > 0.0 && self.forgetting_lambda <= 1.0) {
            return Err(Error::config("dfe.forgetting_lambda", "must lie in (0, 1]"));
        }
        if !(self.pll_proportional >= 0.0 && self.pll_integral >= 0.0) {
            return Err(Error::config("dfe.pll_proportional", "PLL gains must be non-negative"));
        }
        Ok(())
    }
}

/// Exponentially weighted recursive least squares for complex weights,
/// with output `wᴴ v`.
#[derive(Clone, Debug)]
pub struct Rls {
    w: Vec<Complex64>,
    p: Vec<Vec<Complex64>>,
    lambda: f64,
}

impl Rls {
    /// `delta` sets the initial inverse correlation `P = I / delta`.
    pub fn new(n: usize, lambda: f64, delta: f64) -> Self {
        let mut p = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = Complex64::new(1.0 / delta, 0.0);
        }
        Self {
            w: vec![Complex64::new(0.0, 0.0); n],
            p,
            lambda,
        }
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.w
    }

    pub fn output(&self, v: &[Complex64]) -> Complex64 {
        self.w.iter().zip(v).map(|(w, x)| w.conj() * x).sum()
    }

    /// Adapt towards `desired` for input `v`; returns the a priori error.
    pub fn update(&mut self, v: &[Complex64], desired: Complex64) -> Complex64 {
        let n = self.w.len();
        let pv: Vec<Complex64> = self
            .p
            .iter()
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect();
        let denom = self.lambda + v.iter().zip(&pv).map(|(a, b)| a.conj() * b).sum::<Complex64>().re;
        let k: Vec<Complex64> = pv.iter().map(|x| x / denom).collect();
        let e = desired - self.output(v);
        for (w, ki) in self.w.iter_mut().zip(&k) {
            *w += ki * e.conj();
        }
        // P is Hermitian, so vᴴP = (Pv)ᴴ.
        let inv_lambda = 1.0 / self.lambda;
        for i in 0..n {
            for j in 0..n {
                self.p[i][j] = (self.p[i][j] - k[i] * pv[j].conj()) * inv_lambda;
            }
        }
        e
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecisionRecord {
    pub index: usize,
    pub soft: Complex64,
    pub hard: Complex64,
    pub training: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DfeOutput {
    pub decisions: Vec<DecisionRecord>,
    /// Mean squared decision error after training, dB.
    pub mse_db: f64,
    pub diverged: bool,
}

impl DfeOutput {
    /// Bits of the non-training decisions.
    pub fn payload_bits(&self, modulation: Modulation) -> Vec<u8> {
        let payload: Vec<Complex64> = self.decisions.iter().filter(|d| !d.training).map(|d| d.hard).collect();
        modulation.demap(&payload)
    }
}

const DIVERGENCE_WINDOW: usize = 100;

/// Symbol-spaced RLS DFE. The feedforward section is centred on the
/// current symbol; a second-order PLL derotates its input.
pub fn rls_dfe(symbols: &[Complex64], cfg: &DfeConfig, training: &[Complex64], modulation: Modulation) -> DfeOutput {
    let power = symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / symbols.len().max(1) as f64;
    let scale = if power > 0.0 { 1.0 / power.sqrt() } else { 1.0 };
    let input: Vec<Complex64> = symbols.iter().map(|s| s * scale).collect();
    let (nf, nb) = (cfg.feedforward_taps, cfg.feedback_taps);
    let lead = nf / 2;
    let mut rls = Rls::new(nf + nb, cfg.forgetting_lambda, 1e-2);
    let mut past = vec![Complex64::new(0.0, 0.0); nb];
    let (mut theta, mut integ) = (0.0f64, 0.0f64);
    let zero = Complex64::new(0.0, 0.0);
    let mut decisions = Vec::with_capacity(input.len());
    let mut errors = Vec::with_capacity(input.len());
    let mut v = vec![zero; nf + nb];
    for n in 0..input.len() {
        let rot = Complex64::from_polar(1.0, -theta);
        for (k, slot) in v[..nf].iter_mut().enumerate() {
            let idx = n as i64 + lead as i64 - k as i64;
            *slot = if idx >= 0 && (idx as usize) < input.len() {
                input[idx as usize] * rot
            } else {
                zero
            };
        }
        v[nf..].copy_from_slice(&past);
        let soft = rls.output(&v);
        let is_training = n < training.len();
        let hard = if is_training { training[n] } else { modulation.slice(soft) };
        rls.update(&v, hard);
        let err = hard - soft;
        errors.push(err.norm_sqr());
        let phase_error = (soft * hard.conj()).im / hard.norm_sqr().max(1e-12);
        integ += cfg.pll_integral * phase_error;
        theta += cfg.pll_proportional * phase_error + integ;
        past.rotate_right(1);
        if nb > 0 {
            past[0] = hard;
        }
        decisions.push(DecisionRecord {
            index: n,
            soft,
            hard,
            training: is_training,
        });
    }
    let tail = &errors[training.len().min(errors.len())..];
    let mse = if tail.is_empty() { 0.0 } else { tail.iter().sum::<f64>() / tail.len() as f64 };
    let windows: Vec<f64> = errors
        .chunks(DIVERGENCE_WINDOW)
        .filter(|c| c.len() == DIVERGENCE_WINDOW)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    let diverged = windows.first().is_some_and(|&w0| windows.iter().any(|&w| w > 10.0 * w0));
    DfeOutput {
        decisions,
        mse_db: 10.0 * mse.max(1e-300).log10(),
        diverged,
    }
}

pub fn ber(decided: &[u8], truth: &[u8]) -> Result<f64> {
    if decided.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: decided.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let errors = decided.iter().zip(truth).filter(|(a, b)| a != b).count();
    Ok(errors as f64 / truth.len() as f64)
}
