//! Per-epoch delay/Doppler measurement sets.
//!
//! Three sources feed the tracker: matched-filter extraction from received
//! waveforms, synthetic draws from ground truth, and recorded CSV files.
//!
//! Extraction uses the HFM delay-Doppler coupling. A probe starting at frame
//! time `s` and received as `p((1 + a) t - τ - s)` correlates against the
//! replica `p((1 + h) t)` with its envelope peak at lag `L`, where
//!
//! * up sweep:   `τ + s - a (c2 + L) = L - h c2`
//! * down sweep: `τ + s + a (c1 - L) = L + h c1`
//!
//! with `c1 = f1 Tg / (B (1 + h))` and `c2 = f2 Tg / (B (1 + h))`. Two probes
//! of the same frame give two such lines in `(τ, a)`; their intersection is
//! the measurement.

use std::io::Read;
use std::path::Path;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{median, parabolic_offset, Correlator};
use crate::error::{Error, Result};
use crate::geometry::{ChannelSnapshot, PathState, ScenarioConfig};
use crate::signal::PassbandSignal;
use crate::waveform::{hfm_replica, HfmDirection, SegmentKind, SignalParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Extracted,
    SyntheticTrue,
    SyntheticClutter,
    Ingested,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub delay: f64,
    pub doppler: f64,
    pub amplitude: Option<f64>,
    /// Diagnostic only; the tracker sees [`Observation`]s.
    pub origin: Origin,
}

impl Measurement {
    pub fn state(&self) -> PathState {
        PathState::new(self.delay, self.doppler)
    }
}

/// What the tracker is allowed to see of a measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub z: PathState,
    pub amplitude: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementSet {
    pub epoch: usize,
    pub items: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn new(epoch: usize, items: Vec<Measurement>) -> Self {
        Self { epoch, items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn observations(&self) -> Vec<Observation> {
        self.items
            .iter()
            .map(|m| Observation {
                z: m.state(),
                amplitude: m.amplitude,
            })
            .collect()
    }

    pub fn states(&self) -> Vec<PathState> {
        self.items.iter().map(Measurement::state).collect()
    }
}

/// Rectangular `(τ, a)` region where measurements and clutter live.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceWindow {
    pub tau_min: f64,
    pub tau_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

/// Lower bound on the Doppler half-width so a static scenario still has a
/// window with positive area.
pub const MIN_DOPPLER_HALF_WIDTH: f64 = 1e-3;

impl SurveillanceWindow {
    /// `τ ∈ [0.9 min, 1.1 max]` over the expected paths of epochs
    /// `1..=epochs`, `a ∈ ±2|v|/c` (at least ±1e-3).
    pub fn from_scenario(cfg: &ScenarioConfig, epochs: usize) -> Result<Self> {
        let truth = crate::geometry::ground_truth(cfg, epochs.max(1))?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in truth.iter().flat_map(|s| &s.paths) {
            lo = lo.min(p.state.delay);
            hi = hi.max(p.state.delay);
        }
        let half = (2.0 * cfg.relative_speed_v.abs() / cfg.sound_speed_c).max(MIN_DOPPLER_HALF_WIDTH);
        Ok(Self {
            tau_min: 0.9 * lo,
            tau_max: 1.1 * hi,
            a_min: -half,
            a_max: half,
        })
    }

    pub fn volume(&self) -> f64 {
        (self.tau_max - self.tau_min) * (self.a_max - self.a_min)
    }

    pub fn contains(&self, s: &PathState) -> bool {
        (self.tau_min..=self.tau_max).contains(&s.delay) && (self.a_min..=self.a_max).contains(&s.doppler)
    }

    pub fn doppler_center(&self) -> f64 {
        0.5 * (self.a_min + self.a_max)
    }
}

/// Poisson clutter, uniform over the surveillance window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClutterModel {
    pub rate_lambda_c: f64,
    pub window: SurveillanceWindow,
}

impl ClutterModel {
    pub fn volume(&self) -> f64 {
        self.window.volume()
    }

    pub fn density(&self) -> f64 {
        1.0 / self.volume()
    }
}

fn cholesky2(r: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = r[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { r[(1, 0)] / l11 } else { 0.0 };
    let l22 = (r[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

/// Detect each true path with probability `p_d`, perturb it by `N(0, R)`, add
/// Poisson clutter and shuffle.
pub fn synth_measurements<G: Rng + ?Sized>(
    truth: &ChannelSnapshot,
    p_d: f64,
    clutter: &ClutterModel,
    r: &Matrix2<f64>,
    rng: &mut G,
) -> MeasurementSet {
    let l = cholesky2(r);
    let mut items = Vec::new();
    for p in &truth.paths {
        if rng.random::<f64>() < p_d {
            let n0: f64 = rng.sample(StandardNormal);
            let n1: f64 = rng.sample(StandardNormal);
            items.push(Measurement {
                delay: p.state.delay + l[(0, 0)] * n0,
                doppler: p.state.doppler + l[(1, 0)] * n0 + l[(1, 1)] * n1,
                amplitude: Some(p.amplitude),
                origin: Origin::SyntheticTrue,
            });
        }
    }
    let n_clutter = if clutter.rate_lambda_c > 0.0 {
        Poisson::new(clutter.rate_lambda_c).map_or(0, |d| d.sample(rng) as usize)
    } else {
        0
    };
    let w = &clutter.window;
    for _ in 0..n_clutter {
        items.push(Measurement {
            delay: rng.random_range(w.tau_min..=w.tau_max),
            doppler: rng.random_range(w.a_min..=w.a_max),
            amplitude: Some(rng.random::<f64>()),
            origin: Origin::SyntheticClutter,
        });
    }
    items.shuffle(rng);
    MeasurementSet::new(truth.epoch, items)
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    epoch: usize,
    tau_s: f64,
    doppler: f64,
    #[serde(default)]
    amplitude: Option<f64>,
}

/// Read `epoch,tau_s,doppler[,amplitude]` rows (with `#` comments) into one
/// set per epoch that appears in the file.
pub fn ingest_reader<R: Read>(input: R) -> Result<Vec<MeasurementSet>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input);
    let mut sets: Vec<MeasurementSet> = Vec::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        if !(row.tau_s.is_finite() && row.doppler.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite measurement at epoch {}",
                row.epoch
            )));
        }
        let m = Measurement {
            delay: row.tau_s,
            doppler: row.doppler,
            amplitude: row.amplitude,
            origin: Origin::Ingested,
        };
        match sets.last_mut() {
            Some(last) if last.epoch == row.epoch => last.items.push(m),
            Some(last) if last.epoch > row.epoch => {
                return Err(Error::Validation(format!(
                    "epoch {} follows epoch {}; epochs must be non-decreasing",
                    row.epoch, last.epoch
                )));
            }
            _ => sets.push(MeasurementSet::new(row.epoch, vec![m])),
        }
    }
    Ok(sets)
}

pub fn ingest_measurements(path: &Path) -> Result<Vec<MeasurementSet>> {
    ingest_reader(std::fs::File::open(path)?)
}

/// Expand ingested sets to one set per epoch `1..=epochs`, empty where the
/// file has no rows.
pub fn fill_epochs(sets: &[MeasurementSet], epochs: usize) -> Vec<MeasurementSet> {
    let mut out: Vec<MeasurementSet> = (1..=epochs).map(|k| MeasurementSet::new(k, Vec::new())).collect();
    for s in sets {
        if (1..=epochs).contains(&s.epoch) {
            out[s.epoch - 1].items.extend(s.items.iter().copied());
        }
    }
    out
}

/// CSV with columns `epoch,tau_s,doppler,amplitude`.
pub fn write_measurements_csv<W: std::io::Write>(out: W, sets: &[MeasurementSet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "tau_s", "doppler", "amplitude"])?;
    for s in sets {
        for m in &s.items {
            w.write_record([
                s.epoch.to_string(),
                m.delay.to_string(),
                m.doppler.to_string(),
                m.amplitude.map_or(String::new(), |a| a.to_string()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// A probe position within the frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRef {
    pub direction: HfmDirection,
    /// Start time within the transmitted frame, s.
    pub start: f64,
}

/// First and last probe of the frame layout (with data).
pub fn probe_pair(params: &SignalParams) -> (ProbeRef, ProbeRef) {
    let probes: Vec<ProbeRef> = params
        .segments(true)
        .iter()
        .filter_map(|s| {
            let direction = match s.kind {
                SegmentKind::ProbeUp => HfmDirection::Up,
                SegmentKind::ProbeDown => HfmDirection::Down,
                _ => return None,
            };
            Some(ProbeRef {
                direction,
                start: s.start as f64 / params.sample_rate_fs,
            })
        })
        .collect();
    (probes[0], probes[probes.len() - 1])
}

fn sweep_constants(params: &SignalParams, h: f64) -> (f64, f64) {
    let tg = params.probe_samples() as f64 / params.sample_rate_fs;
    let (f1, f2) = params.band();
    let b = f2 - f1;
    (f1 * tg / (b * (1.0 + h)), f2 * tg / (b * (1.0 + h)))
}

/// Line `τ + g a = r` implied by a peak at lag `lag` (s) against the replica
/// scaled by `1 + h`.
pub fn lag_line(params: &SignalParams, probe: &ProbeRef, h: f64, lag: f64) -> (f64, f64) {
    let (c1, c2) = sweep_constants(params, h);
    match probe.direction {
        HfmDirection::Up => (-(c2 + lag), lag - probe.start - h * c2),
        HfmDirection::Down => (c1 - lag, lag - probe.start + h * c1),
    }
}

/// Peak lag predicted for a path state.
pub fn expected_lag(params: &SignalParams, probe: &ProbeRef, h: f64, state: &PathState) -> f64 {
    let (c1, c2) = sweep_constants(params, h);
    let (tau, a) = (state.delay + probe.start, state.doppler);
    match probe.direction {
        HfmDirection::Up => (tau + (h - a) * c2) / (1.0 + a),
        HfmDirection::Down => (tau + (a - h) * c1) / (1.0 + a),
    }
}

/// Intersection of two lag lines.
pub fn solve_lines(l1: (f64, f64), l2: (f64, f64)) -> Option<PathState> {
    let dg = l1.0 - l2.0;
    if dg.abs() < 1e-12 {
        return None;
    }
    let a = (l1.1 - l2.1) / dg;
    Some(PathState::new(l1.1 - l1.0 * a, a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Replica Doppler hypotheses. Empty means the window centre only.
    pub doppler_grid: Vec<f64>,
    /// Detection threshold over the median envelope, dB.
    pub threshold_db: f64,
    /// Peaks more than this far below the strongest peak of the probe are
    /// dropped, dB. At high SNR the median floor alone admits range sidelobes.
    pub dynamic_range_db: f64,
    /// Peaks closer than this many `1/B` are merged.
    pub min_separation_bandwidths: f64,
    /// Largest magnitude ratio, dB, between the two peaks of one path. Both
    /// probes see the same path gain, so a strong peak paired with a weak
    /// one is a sidelobe or noise match.
    pub max_pair_ratio_db: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            doppler_grid: Vec::new(),
            threshold_db: 12.0,
            dynamic_range_db: 20.0,
            min_separation_bandwidths: 1.0,
            max_pair_ratio_db: 6.0,
        }
    }
}

impl ExtractionConfig {
    pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + i as f64 * step).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    pub set: MeasurementSet,
    pub sync_ok: bool,
}

#[derive(Clone, Copy, Debug)]
struct Peak {
    lag: f64,
    magnitude: f64,
}

struct ProbeResponse {
    correlation: Vec<Complex64>,
    first_lag: f64,
    norm: f64,
}

fn hann_tapered(q: &[f64]) -> Vec<f64> {
    let n = q.len();
    q.iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / n as f64).cos();
            v * w
        })
        .collect()
}

fn probe_response(corr: &Correlator, y: &PassbandSignal, params: &SignalParams, probe: &ProbeRef, h: f64) -> ProbeResponse {
    let p = hfm_replica(params, probe.direction, h);
    let q = hann_tapered(&p.samples);
    let norm: f64 = p.samples.iter().zip(&q).map(|(a, b)| a * b).sum();
    let correlation = corr.correlate(&q);
    let first_lag = y.t0 - (q.len() as f64 - 1.0) / y.sample_rate;
    ProbeResponse {
        correlation,
        first_lag,
        norm,
    }
}

fn lag_bounds(params: &SignalParams, probe: &ProbeRef, h: f64, w: &SurveillanceWindow) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for tau in [w.tau_min, w.tau_max] {
        for a in [w.a_min, w.a_max] {
            let l = expected_lag(params, probe, h, &PathState::new(tau, a));
            lo = lo.min(l);
            hi = hi.max(l);
        }
    }
    (lo, hi)
}

/// `threshold` is relative to the median envelope, `dynamic_range` to the
/// strongest candidate; both are amplitude ratios.
fn find_peaks(
    resp: &ProbeResponse,
    fs: f64,
    bounds: (f64, f64),
    (threshold, dynamic_range): (f64, f64),
    radius: usize,
) -> Vec<Peak> {
    let env: Vec<f64> = resp.correlation.iter().map(|c| c.norm()).collect();
    if env.len() < 3 {
        return Vec::new();
    }
    let floor = median(&env);
    let thr = floor * threshold;
    let to_index = |t: f64| ((t - resp.first_lag) * fs).round();
    let i0 = to_index(bounds.0).max(1.0) as usize;
    let i1 = (to_index(bounds.1).max(0.0) as usize).min(env.len() - 2);
    let mut candidates: Vec<usize> = (i0..=i1.max(i0).min(env.len() - 2))
        .filter(|&i| i <= i1 && env[i] > thr && env[i] >= env[i - 1] && env[i] > env[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| env[b].total_cmp(&env[a]));
    if let Some(&top) = candidates.first() {
        let keep = env[top] / dynamic_range;
        candidates.retain(|&i| env[i] >= keep);
    }
    let mut kept: Vec<usize> = Vec::new();
    for i in candidates {
        if kept.iter().all(|&k| k.abs_diff(i) > radius) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept.into_iter()
        .map(|i| {
            let d = parabolic_offset(env[i - 1], env[i], env[i + 1]);
            Peak {
                lag: resp.first_lag + (i as f64 + d) / fs,
                magnitude: env[i] / resp.norm,
            }
        })
        .collect()
}

/// Order-preserving pairing of first-probe and last-probe peaks. Pairs whose
/// implied state falls outside the window, or whose magnitudes differ by more
/// than `max_ratio`, are inadmissible; among maximal pairings the one with the
/// most similar magnitudes wins.
fn pair_peaks(
    params: &SignalParams,
    probes: (&ProbeRef, &ProbeRef),
    h: f64,
    (p1, p2): (&[Peak], &[Peak]),
    window: &SurveillanceWindow,
    max_ratio: f64,
) -> Vec<(PathState, f64)> {
    let (n, m) = (p1.len(), p2.len());
    let solve = |i: usize, j: usize| -> Option<PathState> {
        if (p1[i].magnitude / p2[j].magnitude).ln().abs() > max_ratio.ln() {
            return None;
        }
        let s = solve_lines(
            lag_line(params, probes.0, h, p1[i].lag),
            lag_line(params, probes.1, h, p2[j].lag),
        )?;
        window.contains(&s).then_some(s)
    };
    let mut dp = vec![vec![0.0f64; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            let mut best = dp[i - 1][j].max(dp[i][j - 1]);
            if solve(i - 1, j - 1).is_some() {
                let sim = -(p1[i - 1].magnitude / p2[j - 1].magnitude).ln().abs();
                best = best.max(dp[i - 1][j - 1] + 1.0 + 0.01 * sim.max(-10.0));
            }
            dp[i][j] = best;
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if dp[i][j] == dp[i - 1][j] {
            i -= 1;
        } else if dp[i][j] == dp[i][j - 1] {
            j -= 1;
        } else {
            let s = solve(i - 1, j - 1).expect("admissible pair");
            out.push((s, 0.5 * (p1[i - 1].magnitude + p2[j - 1].magnitude)));
            i -= 1;
            j -= 1;
        }
    }
    out.reverse();
    out
}

/// Matched-filter extraction of `(τ̃, ã, Â)` from one received frame.
pub fn extract_measurements(
    y: &PassbandSignal,
    params: &SignalParams,
    cfg: &ExtractionConfig,
    window: &SurveillanceWindow,
    epoch: usize,
) -> Extraction {
    let fs = params.sample_rate_fs;
    let (first, last) = probe_pair(params);
    let max_replica = hfm_replica(params, HfmDirection::Up, window.a_min.min(0.0)).len() + 1;
    let corr = Correlator::new(&y.samples, max_replica);
    let threshold = (10f64.powf(cfg.threshold_db / 20.0), 10f64.powf(cfg.dynamic_range_db / 20.0));
    let radius = (cfg.min_separation_bandwidths * fs / params.probe_bandwidth).round() as usize;

    let h0 = window.doppler_center();
    let detect = |h: f64| {
        let r1 = probe_response(&corr, y, params, &first, h);
        let r2 = probe_response(&corr, y, params, &last, h);
        let p1 = find_peaks(&r1, fs, lag_bounds(params, &first, h, window), threshold, radius);
        let p2 = find_peaks(&r2, fs, lag_bounds(params, &last, h, window), threshold, radius);
        (p1, p2)
    };
    let (p1, p2) = detect(h0);
    let sync_ok = !p1.is_empty() && !p2.is_empty();
    let max_ratio = 10f64.powf(cfg.max_pair_ratio_db / 20.0);
    let mut pairs = pair_peaks(params, (&first, &last), h0, (&p1, &p2), window, max_ratio);

    if cfg.doppler_grid.len() > 1 {
        // Re-fit each measurement against the replica pair nearest its Doppler.
        let mut cache: Vec<Option<(Vec<Peak>, Vec<Peak>)>> = vec![None; cfg.doppler_grid.len()];
        for (state, amp) in pairs.iter_mut() {
            let g = cfg
                .doppler_grid
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - state.doppler).abs().total_cmp(&(b.1 - state.doppler).abs()))
                .map(|(i, _)| i)
                .unwrap();
            let h = cfg.doppler_grid[g];
            let (q1, q2) = cache[g].get_or_insert_with(|| detect(h));
            let l1 = expected_lag(params, &first, h, state);
            let l2 = expected_lag(params, &last, h, state);
            let near = |ps: &[Peak], l: f64| {
                ps.iter()
                    .copied()
                    .min_by(|a, b| (a.lag - l).abs().total_cmp(&(b.lag - l).abs()))
                    .filter(|p| (p.lag - l).abs() <= radius as f64 / fs)
            };
            if let (Some(a), Some(b)) = (near(q1, l1), near(q2, l2)) {
                if let Some(s) = solve_lines(
                    lag_line(params, &first, h, a.lag),
                    lag_line(params, &last, h, b.lag),
                ) {
                    if window.contains(&s) {
                        *state = s;
                        *amp = 0.5 * (a.magnitude + b.magnitude);
                    }
                }
            }
        }
    }

    let items = pairs
        .into_iter()
        .map(|(s, amp)| Measurement {
            delay: s.delay,
            doppler: s.doppler,
            amplitude: Some(amp),
            origin: Origin::Extracted,
        })
        .collect();
    Extraction {
        set: MeasurementSet::new(epoch, items),
        sync_ok,
    }
}

/// Matched-filter envelope of one probe over the Doppler grid, as
/// `lag_s,doppler,magnitude` rows restricted to the surveillance window.
pub fn write_surface_csv<W: std::io::Write>(
    out: W,
    y: &PassbandSignal,
    params: &SignalParams,
    grid: &[f64],
    window: &SurveillanceWindow,
) -> Result<()> {
    let (first, _) = probe_pair(params);
    let max_replica = hfm_replica(params, HfmDirection::Up, window.a_min.min(0.0)).len() + 1;
    let corr = Correlator::new(&y.samples, max_replica);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["lag_s", "doppler", "magnitude"])?;
    for &h in grid {
        let r = probe_response(&corr, y, params, &first, h);
        let (lo, hi) = lag_bounds(params, &first, h, window);
        for (i, c) in r.correlation.iter().enumerate() {
            let lag = r.first_lag + i as f64 / params.sample_rate_fs;
            if (lo..=hi).contains(&lag) {
                w.write_record([lag.to_string(), h.to_string(), (c.norm() / r.norm).to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
