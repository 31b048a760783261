//! Passive time-reversal mirrors.
//!
//! All mirrors return a signal on the transmitter's time base: with perfect
//! knowledge, a frame sent as `x(t)` comes back focused near `x(t)`, and
//! the output is `round(max τ̂ fs)` samples shorter than the input.
//!
//! * conventional: correlate `y` with a sampled CIR estimate,
//!   `z(t) = Σ_k ĥ_k y(t + τ_k)`;
//! * path-specific (PS): `z(t) = Σ_p Â_p y((1 - â_p) t + τ̂_p)`;
//! * path-specific compensated (PSC): `z(t) = Σ_p Â_p y((t + τ̂_p) / (1 + â_p))`,
//!   which undoes `x((1 + a) t - τ)` exactly when `(τ̂, â) = (τ, a)`.

use std::io::Write;

use log::warn;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{fft_size, forward_plan, inverse_plan, xcorr_real, Correlator};
use crate::error::{Error, Result};
use crate::geometry::{ChannelSnapshot, PathArrival, PathSpec, PathState};
use crate::resample::SincKernel;
use crate::signal::PassbandSignal;
use crate::tracker::TrackEstimate;
use crate::waveform::apply_paths;

/// One tracked eigenpath: amplitude, delay (s) and Doppler scaling factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub amplitude: f64,
    pub delay: f64,
    pub doppler: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackedChannel {
    pub epoch: usize,
    pub triplets: Vec<Triplet>,
}

impl TrackedChannel {
    pub fn new(epoch: usize, triplets: Vec<Triplet>) -> Result<Self> {
        if let Some(t) = triplets.iter().find(|t| !(t.delay > 0.0)) {
            return Err(Error::NonPositive {
                what: "tracked delay",
                value: t.delay,
            });
        }
        Ok(Self { epoch, triplets })
    }

    pub fn from_snapshot(snap: &ChannelSnapshot) -> Self {
        Self {
            epoch: snap.epoch,
            triplets: snap
                .paths
                .iter()
                .map(|p| Triplet {
                    amplitude: p.amplitude,
                    delay: p.state.delay,
                    doppler: p.state.doppler,
                })
                .collect(),
        }
    }

    /// Mirror from the tracks judged to exist.
    pub fn from_tracks(epoch: usize, tracks: &[TrackEstimate]) -> Self {
        Self {
            epoch,
            triplets: tracks
                .iter()
                .filter(|t| t.existing && t.state.delay > 0.0)
                .map(|t| Triplet {
                    amplitude: t.amplitude,
                    delay: t.state.delay,
                    doppler: t.state.doppler,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn max_delay(&self) -> f64 {
        self.triplets.iter().map(|t| t.delay).fold(0.0, f64::max)
    }

    /// Channel with every Doppler factor set to zero.
    pub fn static_part(&self) -> Self {
        let mut out = self.clone();
        for t in &mut out.triplets {
            t.doppler = 0.0;
        }
        out
    }

    pub fn scaled(&self, gain: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.triplets {
            t.amplitude *= gain;
        }
        out
    }

    /// The channel as a snapshot, for pushing signals through it.
    pub fn to_snapshot(&self) -> ChannelSnapshot {
        ChannelSnapshot {
            epoch: self.epoch,
            range_d1: f64::NAN,
            paths: self
                .triplets
                .iter()
                .enumerate()
                .map(|(i, t)| PathArrival {
                    spec: PathSpec {
                        label: i,
                        signature: Vec::new(),
                        equivalent_depth: f64::NAN,
                    },
                    amplitude: t.amplitude,
                    state: PathState::new(t.delay, t.doppler),
                })
                .collect(),
        }
    }
}

fn output_len(y: &PassbandSignal, advance: f64) -> usize {
    y.len().saturating_sub((advance * y.sample_rate).round() as usize)
}

/// `Σ_p gain_p y(alpha_p t + shift_p)` on `y`'s time base.
fn mirror_branches(y: &PassbandSignal, len: usize, branches: &[(f64, f64, f64)]) -> PassbandSignal {
    let fs = y.sample_rate;
    let kernel = SincKernel::shared();
    let mut out = vec![0.0; len];
    for &(gain, alpha, shift) in branches {
        // Read position in samples of y for output sample n is alpha n + offset.
        let offset = (alpha * y.t0 + shift - y.t0) * fs;
        kernel.accumulate_affine(&mut out, &y.samples, alpha, offset, gain);
    }
    PassbandSignal::new(out, fs, y.t0)
}

/// Dense conventional mirror. `cir.t0` is the delay of the first tap; taps
/// are taken to lie on the sample grid of `y`.
pub fn conventional_ptrm(y: &PassbandSignal, cir: &PassbandSignal) -> PassbandSignal {
    let k0 = (cir.t0 * y.sample_rate).round().max(0.0) as usize;
    let len = y.len().saturating_sub(k0 + cir.len().saturating_sub(1));
    if len == 0 || cir.is_empty() {
        return PassbandSignal::zeros(len, y.sample_rate, y.t0);
    }
    let c = xcorr_real(&y.samples, &cir.samples);
    let base = cir.len() - 1 + k0;
    PassbandSignal::new(c[base..base + len].to_vec(), y.sample_rate, y.t0)
}

/// Conventional mirror whose CIR is a sparse set of taps at arbitrary
/// (off-grid) delays, `z(t) = Σ_p Â_p y(t + τ̂_p)`. Doppler is ignored.
pub fn conventional_sparse(y: &PassbandSignal, ch: &TrackedChannel) -> PassbandSignal {
    let len = output_len(y, ch.max_delay());
    let branches: Vec<_> = ch.triplets.iter().map(|t| (t.amplitude, 1.0, t.delay)).collect();
    mirror_branches(y, len, &branches)
}

pub fn ps_ptrm(y: &PassbandSignal, ch: &TrackedChannel) -> PassbandSignal {
    if ch.is_empty() {
        warn!("epoch {}: empty tracked channel, PS mirror output is zero", ch.epoch);
        return PassbandSignal::zeros(y.len(), y.sample_rate, y.t0);
    }
    let len = output_len(y, ch.max_delay());
    let branches: Vec<_> = ch
        .triplets
        .iter()
        .map(|t| (t.amplitude, 1.0 - t.doppler, t.delay))
        .collect();
    mirror_branches(y, len, &branches)
}

pub fn psc_ptrm(y: &PassbandSignal, ch: &TrackedChannel) -> Result<PassbandSignal> {
    if let Some(t) = ch.triplets.iter().find(|t| !(1.0 + t.doppler > 0.0)) {
        return Err(Error::InvalidDoppler(t.doppler));
    }
    if ch.is_empty() {
        warn!("epoch {}: empty tracked channel, PSC mirror output is zero", ch.epoch);
        return Ok(PassbandSignal::zeros(y.len(), y.sample_rate, y.t0));
    }
    let len = output_len(y, ch.max_delay());
    let branches: Vec<_> = ch
        .triplets
        .iter()
        .map(|t| {
            let s = 1.0 + t.doppler;
            (t.amplitude, 1.0 / s, t.delay / s)
        })
        .collect();
    Ok(mirror_branches(y, len, &branches))
}

/// Least-squares CIR from one known probe, solved in the frequency domain
/// with a ridge term and restricted to delays in `[delay_lo, delay_hi]`.
///
/// `probe_start` is the probe's start time within the transmitted frame.
/// Only the part of `y` where that probe can arrive enters the fit.
/// `ridge` is relative to the mean probe power spectrum.
pub fn ls_cir(
    y: &PassbandSignal,
    probe: &PassbandSignal,
    probe_start: f64,
    delay_lo: f64,
    delay_hi: f64,
    ridge: f64,
) -> Result<PassbandSignal> {
    if !(delay_hi > delay_lo) || delay_lo < 0.0 {
        return Err(Error::Validation(format!(
            "CIR delay range [{delay_lo}, {delay_hi}] is empty or negative"
        )));
    }
    let fs = y.sample_rate;
    let clamp = |t: f64| (((t - y.t0) * fs).round().max(0.0) as usize).min(y.len());
    let start = clamp(probe_start + delay_lo);
    let stop = clamp(probe_start + probe.duration() + delay_hi);
    if stop <= start {
        return Err(Error::Validation("received signal does not cover the probe".into()));
    }
    let seg = &y.samples[start..stop];
    let seg_t0 = y.t0 + start as f64 / fs;
    let n = fft_size(seg.len() + probe.len());
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(n, Complex64::new(0.0, 0.0));
        forward_plan(n).process(&mut buf);
        buf
    };
    let ys = spectrum(seg);
    let ps = spectrum(&probe.samples);
    let mean_power = ps.iter().map(|c| c.norm_sqr()).sum::<f64>() / n as f64;
    let rho = ridge * mean_power;
    let mut hs: Vec<Complex64> = ys
        .iter()
        .zip(&ps)
        .map(|(a, b)| a * b.conj() / (b.norm_sqr() + rho))
        .collect();
    inverse_plan(n).process(&mut hs);
    // Sample k of the inverse transform is the response at delay
    // k / fs - (probe_start - seg_t0).
    let origin = (probe_start - seg_t0) * fs;
    let lo = (delay_lo * fs + origin).floor().max(0.0) as usize;
    let hi = ((delay_hi * fs + origin).ceil().max(0.0) as usize).min(n - 1);
    let taps: Vec<f64> = hs[lo..=hi].iter().map(|c| c.re / n as f64).collect();
    Ok(PassbandSignal::new(taps, fs, (lo as f64 - origin) / fs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MirrorMode {
    Conventional,
    PathSpecific,
    Compensated,
}

/// Apply the mirror selected by `mode` built from `ch`. The conventional
/// mode uses the sparse static taps of `ch`.
pub fn apply_mirror(y: &PassbandSignal, ch: &TrackedChannel, mode: MirrorMode) -> Result<PassbandSignal> {
    match mode {
        MirrorMode::Conventional => Ok(conventional_sparse(y, ch)),
        MirrorMode::PathSpecific => Ok(ps_ptrm(y, ch)),
        MirrorMode::Compensated => psc_ptrm(y, ch),
    }
}

/// Lag profile of the end-to-end channel-plus-mirror response.
#[derive(Clone, Debug, PartialEq)]
pub struct QFunctionProfile {
    /// Lags, s, symmetric about zero.
    pub lags: Vec<f64>,
    /// Correlation envelope normalized by the probe energy.
    pub magnitude: Vec<f64>,
    pub peak_index: usize,
    pub mainlobe_peak: f64,
    pub max_sidelobe: f64,
}

impl QFunctionProfile {
    pub fn peak_lag(&self) -> f64 {
        self.lags[self.peak_index]
    }

    /// Mainlobe peak over the largest sidelobe.
    pub fn focusing_ratio(&self) -> f64 {
        if self.max_sidelobe > 0.0 {
            self.mainlobe_peak / self.max_sidelobe
        } else {
            f64::INFINITY
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lag_s", "magnitude"])?;
        for (l, m) in self.lags.iter().zip(&self.magnitude) {
            w.write_record([l.to_string(), m.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Profile statistics for an envelope sampled on a symmetric lag axis. The
/// mainlobe extends from the global maximum to the nearest local minimum on
/// each side.
pub fn profile_from_envelope(lags: Vec<f64>, magnitude: Vec<f64>) -> QFunctionProfile {
    let peak_index = magnitude
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let mut left = peak_index;
    while left > 0 && magnitude[left - 1] < magnitude[left] {
        left -= 1;
    }
    let mut right = peak_index;
    while right + 1 < magnitude.len() && magnitude[right + 1] < magnitude[right] {
        right += 1;
    }
    let max_sidelobe = magnitude[..left]
        .iter()
        .chain(&magnitude[(right + 1).min(magnitude.len())..])
        .fold(0.0f64, |m, &v| m.max(v));
    QFunctionProfile {
        mainlobe_peak: magnitude.get(peak_index).copied().unwrap_or(0.0),
        lags,
        magnitude,
        peak_index,
        max_sidelobe,
    }
}

/// Push `probe` through `ch_true`, mirror it with `ch_hat`, and correlate the
/// result against the probe.
pub fn q_profile(
    ch_true: &TrackedChannel,
    ch_hat: &TrackedChannel,
    probe: &PassbandSignal,
    mode: MirrorMode,
) -> Result<QFunctionProfile> {
    let fs = probe.sample_rate;
    let spread = |c: &TrackedChannel| {
        let lo = c.triplets.iter().map(|t| t.delay).fold(f64::INFINITY, f64::min);
        if lo.is_finite() {
            c.max_delay() - lo
        } else {
            0.0
        }
    };
    let half = ((probe.duration() + spread(ch_true) + spread(ch_hat)) * fs).ceil() as i64;
    // Zero padding on both sides keeps early and late copies whole.
    let pad = half as usize;
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(&probe.samples);
    padded.resize(probe.len() + 2 * pad, 0.0);
    let x = PassbandSignal::new(padded, fs, probe.t0 - pad as f64 / fs);
    let y = apply_paths(&x, &ch_true.to_snapshot());
    let z = apply_mirror(&y, ch_hat, mode)?;
    let energy = probe.energy().max(f64::MIN_POSITIVE);
    let corr = Correlator::new(&z.samples, probe.len()).correlate(&probe.samples);
    // corr index i holds lag i - (probe.len - 1) samples of z relative to the
    // probe; z and probe share t0.
    let zero = probe.len() as i64 - 1 + ((probe.t0 - z.t0) * fs).round() as i64;
    let mut lags = Vec::with_capacity(2 * half as usize + 1);
    let mut magnitude = Vec::with_capacity(2 * half as usize + 1);
    for k in -half..=half {
        let i = zero + k;
        lags.push(k as f64 / fs);
        magnitude.push(if i >= 0 && (i as usize) < corr.len() {
            corr[i as usize].norm() / energy
        } else {
            0.0
        });
    }
    Ok(profile_from_envelope(lags, magnitude))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{gen_hfm, HfmDirection, SignalParams};
    use proptest::prelude::*;

    fn probe() -> PassbandSignal {
        gen_hfm(&SignalParams::simulation(), HfmDirection::Up).unwrap()
    }

    fn channel(paths: &[(f64, f64, f64)]) -> TrackedChannel {
        TrackedChannel::new(
            1,
            paths
                .iter()
                .map(|&(amplitude, delay, doppler)| Triplet {
                    amplitude,
                    delay,
                    doppler,
                })
                .collect(),
        )
        .unwrap()
    }

    fn doubly_spread() -> TrackedChannel {
        channel(&[
            (1.0, 0.3334, -3.3e-3),
            (0.8, 0.3521, -3.0e-3),
            (0.6, 0.3779, -2.8e-3),
            (0.5, 0.4013, -2.5e-3),
            (0.4, 0.4392, -2.2e-3),
        ])
    }

    fn noise(len: usize, seed: u64) -> PassbandSignal {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        PassbandSignal::new((0..len).map(|_| StandardNormal.sample(&mut rng)).collect(), 50_000.0, 0.0)
    }

    #[test]
    fn rejects_non_positive_delay() {
        assert!(TrackedChannel::new(0, vec![Triplet { amplitude: 1.0, delay: 0.0, doppler: 0.0 }]).is_err());
    }

    #[test]
    fn conventional_identity_mirror() {
        let y = noise(500, 1);
        let z = conventional_ptrm(&y, &PassbandSignal::new(vec![1.0], 50_000.0, 0.0));
        assert_eq!(z.len(), y.len());
        assert!(z.samples.iter().zip(&y.samples).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn conventional_dense_equals_direct_sum() {
        let y = noise(400, 2);
        let h = PassbandSignal::new(vec![0.5, -0.25, 0.125], 50_000.0, 10.0 / 50_000.0);
        let z = conventional_ptrm(&y, &h);
        assert_eq!(z.len(), 400 - 12);
        for n in 0..z.len() {
            let want: f64 = (0..3).map(|k| h.samples[k] * y.samples[n + 10 + k]).sum();
            assert!((z.samples[n] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_static_path_is_advanced_copy() {
        let y = noise(3000, 3);
        let z = ps_ptrm(&y, &channel(&[(2.0, 100.0 / 50_000.0, 0.0)]));
        assert_eq!(z.len(), 2900);
        for n in 0..z.len() {
            assert!((z.samples[n] - 2.0 * y.samples[n + 100]).abs() < 1e-12);
        }
    }

    #[test]
    fn static_channel_matches_dense_equivalent() {
        let y = noise(4000, 4);
        let ch = channel(&[(1.0, 20.0 / 50_000.0, 0.0), (0.5, 35.0 / 50_000.0, 0.0)]);
        let mut taps = vec![0.0; 16];
        taps[0] = 1.0;
        taps[15] = 0.5;
        let dense = conventional_ptrm(&y, &PassbandSignal::new(taps, 50_000.0, 20.0 / 50_000.0));
        let ps = ps_ptrm(&y, &ch);
        assert_eq!(dense.len(), ps.len());
        for (a, b) in dense.samples.iter().zip(&ps.samples) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn psc_without_doppler_is_ps_bit_for_bit() {
        let y = noise(5000, 5);
        let ch = doubly_spread().static_part();
        let y = PassbandSignal::new(y.samples, 50_000.0, 0.0);
        assert_eq!(ps_ptrm(&y, &ch), psc_ptrm(&y, &ch).unwrap());
    }

    #[test]
    fn psc_rejects_invalid_doppler() {
        let y = noise(100, 6);
        let ch = channel(&[(1.0, 0.001, -1.0)]);
        assert!(matches!(psc_ptrm(&y, &ch), Err(Error::InvalidDoppler(_))));
    }

    #[test]
    fn empty_channel_gives_zero_output() {
        let y = noise(100, 7);
        let z = ps_ptrm(&y, &TrackedChannel::default());
        assert_eq!(z.len(), 100);
        assert!(z.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psc_single_path_undoes_channel() {
        let x = probe();
        let ch = channel(&[(0.7, 0.35, -3e-3)]);
        let y = apply_paths(&x, &ch.to_snapshot());
        let z = psc_ptrm(&y, &ch).unwrap();
        let n = x.len().min(z.len());
        let err: f64 = (0..n).map(|i| (z.samples[i] - 0.49 * x.samples[i]).powi(2)).sum();
        assert!(err / (0.49f64.powi(2) * x.energy()) < 1e-3);
    }

    #[test]
    fn q_profile_single_static_path_is_autocorrelation() {
        let ch = channel(&[(1.0, 0.35, 0.0)]);
        let q = q_profile(&ch, &ch, &probe(), MirrorMode::PathSpecific).unwrap();
        assert_eq!(q.peak_lag(), 0.0);
        assert!((q.mainlobe_peak - 1.0).abs() < 1e-3);
        assert_eq!(q.lags.len() % 2, 1);
        assert_eq!(q.lags[q.lags.len() / 2], 0.0);
    }

    #[test]
    fn q_profile_two_static_paths() {
        let ch = channel(&[(1.0, 0.34, 0.0), (0.6, 0.36, 0.0)]);
        let q = q_profile(&ch, &ch, &probe(), MirrorMode::PathSpecific).unwrap();
        assert_eq!(q.peak_lag(), 0.0);
        assert!((q.mainlobe_peak - 1.36).abs() < 0.03);
        // Cross terms land at ±(τ1 - τ2) with height A1 A2.
        for lag in [-0.02, 0.02] {
            let i = q.lags.iter().position(|&l| (l - lag).abs() < 1e-9).unwrap();
            let local = q.magnitude[i - 2..=i + 2].iter().fold(0.0f64, |m, &v| m.max(v));
            assert!((local - 0.6).abs() < 0.03, "{local}");
        }
    }

    #[test]
    fn psc_focuses_at_zero_lag_with_doppler_spread() {
        let ch = doubly_spread();
        let q = q_profile(&ch, &ch, &probe(), MirrorMode::Compensated).unwrap();
        let want: f64 = ch.triplets.iter().map(|t| t.amplitude * t.amplitude).sum();
        assert!(q.peak_lag().abs() <= 1.0 / 50_000.0);
        assert!((q.mainlobe_peak - want).abs() < 0.02 * want, "{} vs {want}", q.mainlobe_peak);
        let ps = q_profile(&ch, &ch, &probe(), MirrorMode::PathSpecific).unwrap();
        assert!(ps.focusing_ratio() < q.focusing_ratio());
    }

    #[test]
    fn doppler_spread_degrades_conventional_focusing() {
        let spread = doubly_spread();
        let still = spread.static_part();
        let moving = q_profile(&spread, &spread, &probe(), MirrorMode::Conventional).unwrap();
        let fixed = q_profile(&still, &still, &probe(), MirrorMode::Conventional).unwrap();
        assert!(moving.focusing_ratio() < fixed.focusing_ratio());
    }

    #[test]
    fn ls_cir_recovers_static_taps() {
        let x = probe();
        let ch = channel(&[(1.0, 0.34, 0.0), (-0.5, 0.35, 0.0)]);
        let y = apply_paths(&x, &ch.to_snapshot());
        let h = ls_cir(&y, &x, 0.0, 0.33, 0.36, 1e-3).unwrap();
        // The estimate is band-limited: each path becomes a band-pass pulse.
        let tap = |d: f64| h.samples[((d - h.t0) * 50_000.0).round() as usize];
        let peak = h.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(tap(0.34), peak);
        assert!((tap(0.35) / tap(0.34) + 0.5).abs() < 0.025);
        let off = h.samples.iter().enumerate().filter(|(i, _)| {
            let d = h.t0 + *i as f64 / 50_000.0;
            (d - 0.34).abs() > 1e-3 && (d - 0.35).abs() > 1e-3
        });
        assert!(off.map(|(_, v)| v.abs()).fold(0.0, f64::max) < 0.1 * peak);
    }

    #[test]
    fn q_profile_csv() {
        let ch = channel(&[(1.0, 0.35, 0.0)]);
        let q = q_profile(&ch, &ch, &probe(), MirrorMode::PathSpecific).unwrap();
        let mut buf = Vec::new();
        q.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("lag_s,magnitude\n"));
        assert_eq!(text.lines().count(), q.lags.len() + 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mirrors_are_linear_in_amplitudes(gain in -3.0f64..3.0, seed in 0u64..1000) {
            let y = noise(30_000, seed);
            let ch = doubly_spread();
            for mode in [MirrorMode::Conventional, MirrorMode::PathSpecific, MirrorMode::Compensated] {
                let a = apply_mirror(&y, &ch, mode).unwrap().scaled(gain);
                let b = apply_mirror(&y, &ch.scaled(gain), mode).unwrap();
                for (u, v) in a.samples.iter().zip(&b.samples) {
                    prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()) * 10.0);
                }
            }
        }
    }
}
