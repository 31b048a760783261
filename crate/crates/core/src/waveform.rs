//! Transmitted frames and the doubly-spread channel.
//!
//! A frame is a real passband sequence starting at transmitter time zero. The
//! simulation layout is `HFM+ | guard | data | guard | HFM-`; the experiment
//! layout brackets the data with two HFM+ probes and optionally opens with a
//! single HFM- and guard.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::ChannelSnapshot;
use crate::resample::SincKernel;
use crate::signal::PassbandSignal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
        }
    }

    pub fn map(self, bits: &[u8]) -> Vec<Complex64> {
        let b = |v: u8| 1.0 - 2.0 * v as f64;
        match self {
            Modulation::Bpsk => bits.iter().map(|&v| Complex64::new(b(v), 0.0)).collect(),
            Modulation::Qpsk => bits
                .chunks(2)
                .map(|p| Complex64::new(b(p[0]), b(*p.get(1).unwrap_or(&0))) * std::f64::consts::FRAC_1_SQRT_2)
                .collect(),
        }
    }

    /// Nearest constellation point.
    pub fn slice(self, z: Complex64) -> Complex64 {
        let s = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
        match self {
            Modulation::Bpsk => Complex64::new(s(z.re), 0.0),
            Modulation::Qpsk => Complex64::new(s(z.re), s(z.im)) * std::f64::consts::FRAC_1_SQRT_2,
        }
    }

    pub fn demap(self, symbols: &[Complex64]) -> Vec<u8> {
        let bit = |v: f64| u8::from(v < 0.0);
        match self {
            Modulation::Bpsk => symbols.iter().map(|z| bit(z.re)).collect(),
            Modulation::Qpsk => symbols.iter().flat_map(|z| [bit(z.re), bit(z.im)]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameLayout {
    Simulation,
    Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalParams {
    pub carrier_fc: f64,
    pub sample_rate_fs: f64,
    pub probe_length_tg: f64,
    pub probe_bandwidth: f64,
    pub guard_length: f64,
    pub data_length: f64,
    pub symbol_rate_rs: f64,
    pub modulation: Modulation,
    pub rolloff: f64,
    /// Pulse half-length in symbols.
    pub pulse_span: usize,
    pub training_length: usize,
    pub layout: FrameLayout,
    /// Experiment layout only: open the frame with `HFM- | guard`.
    pub leading_down_probe: bool,
    pub snr_db: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self::simulation()
    }
}

impl SignalParams {
    pub fn simulation() -> Self {
        Self {
            carrier_fc: 5_000.0,
            sample_rate_fs: 50_000.0,
            probe_length_tg: 0.1,
            probe_bandwidth: 4_000.0,
            guard_length: 0.1,
            data_length: 0.5,
            symbol_rate_rs: 1_000.0,
            modulation: Modulation::Bpsk,
            rolloff: 0.25,
            pulse_span: 8,
            training_length: 200,
            layout: FrameLayout::Simulation,
            leading_down_probe: false,
            snr_db: 5.0,
        }
    }

    pub fn experiment() -> Self {
        Self {
            carrier_fc: 12_000.0,
            sample_rate_fs: 96_000.0,
            probe_length_tg: 0.021_33,
            probe_bandwidth: 8_000.0,
            guard_length: 0.021_33,
            data_length: 0.389_33,
            symbol_rate_rs: 6_000.0,
            modulation: Modulation::Qpsk,
            layout: FrameLayout::Experiment,
            ..Self::simulation()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("signal.carrier_fc", self.carrier_fc),
            ("signal.sample_rate_fs", self.sample_rate_fs),
            ("signal.probe_length_tg", self.probe_length_tg),
            ("signal.probe_bandwidth", self.probe_bandwidth),
            ("signal.symbol_rate_rs", self.symbol_rate_rs),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {value}")));
            }
        }
        if !(self.guard_length >= 0.0 && self.data_length >= 0.0) {
            return Err(Error::config("signal.guard_length", "lengths must be non-negative"));
        }
        let (low, high) = self.band();
        if low <= 0.0 || self.sample_rate_fs <= 2.0 * high {
            return Err(Error::BandViolation {
                low,
                high,
                sample_rate: self.sample_rate_fs,
            });
        }
        let occupied = self.carrier_fc + 0.5 * self.symbol_rate_rs * (1.0 + self.rolloff);
        if self.sample_rate_fs <= 2.0 * occupied {
            return Err(Error::config("signal.symbol_rate_rs", "data band exceeds Nyquist"));
        }
        let sps = self.sample_rate_fs / self.symbol_rate_rs;
        if (sps - sps.round()).abs() > 1e-9 || sps.round() < 2.0 {
            return Err(Error::config(
                "signal.symbol_rate_rs",
                "sample rate must be an integer multiple (>= 2) of the symbol rate",
            ));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return Err(Error::config("signal.rolloff", "must lie in [0, 1]"));
        }
        if self.pulse_span == 0 {
            return Err(Error::config("signal.pulse_span", "must be at least 1"));
        }
        if self.data_symbols() <= self.training_length {
            return Err(Error::config(
                "signal.training_length",
                "data segment must hold more symbols than the training prefix",
            ));
        }
        if !(self.snr_db.is_finite() || self.snr_db == f64::INFINITY) {
            return Err(Error::config("signal.snr_db", "must be finite or +inf"));
        }
        Ok(())
    }

    /// Probe band `[fc - B/2, fc + B/2]`.
    pub fn band(&self) -> (f64, f64) {
        (
            self.carrier_fc - 0.5 * self.probe_bandwidth,
            self.carrier_fc + 0.5 * self.probe_bandwidth,
        )
    }

    pub fn samples_per_symbol(&self) -> usize {
        (self.sample_rate_fs / self.symbol_rate_rs).round() as usize
    }

    pub fn probe_samples(&self) -> usize {
        (self.probe_length_tg * self.sample_rate_fs).round() as usize
    }

    pub fn guard_samples(&self) -> usize {
        (self.guard_length * self.sample_rate_fs).round() as usize
    }

    pub fn data_samples(&self) -> usize {
        (self.data_length * self.sample_rate_fs).round() as usize
    }

    pub fn data_symbols(&self) -> usize {
        self.data_samples() / self.samples_per_symbol()
    }

    pub fn payload_symbols(&self) -> usize {
        self.data_symbols().saturating_sub(self.training_length)
    }

    pub fn payload_capacity_bits(&self) -> usize {
        self.payload_symbols() * self.modulation.bits_per_symbol()
    }

    /// Segment plan for a frame with (or without) a data section.
    pub fn segments(&self, with_data: bool) -> Vec<Segment> {
        let (p, g, d) = (self.probe_samples(), self.guard_samples(), self.data_samples());
        let mut kinds: Vec<(SegmentKind, usize)> = Vec::new();
        match self.layout {
            FrameLayout::Simulation => {
                kinds.push((SegmentKind::ProbeUp, p));
                kinds.push((SegmentKind::Guard, g));
                if with_data {
                    kinds.push((SegmentKind::Data, d));
                }
                kinds.push((SegmentKind::Guard, g));
                kinds.push((SegmentKind::ProbeDown, p));
            }
            FrameLayout::Experiment => {
                if self.leading_down_probe {
                    kinds.push((SegmentKind::ProbeDown, p));
                    kinds.push((SegmentKind::Guard, g));
                }
                kinds.push((SegmentKind::ProbeUp, p));
                kinds.push((SegmentKind::Guard, g));
                if with_data {
                    kinds.push((SegmentKind::Data, d));
                }
                kinds.push((SegmentKind::Guard, g));
                kinds.push((SegmentKind::ProbeUp, p));
            }
        }
        let mut start = 0;
        kinds
            .into_iter()
            .map(|(kind, len)| {
                let s = Segment { kind, start, len };
                start += len;
                s
            })
            .collect()
    }

    /// Known training symbols (PRBS-9 bits through the frame's mapping).
    pub fn training_symbols(&self) -> Vec<Complex64> {
        let bits = prbs9(self.training_length * self.modulation.bits_per_symbol());
        self.modulation.map(&bits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    ProbeUp,
    ProbeDown,
    Guard,
    Data,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub segments: Vec<Segment>,
    pub signal: PassbandSignal,
    pub payload_bits: Vec<u8>,
    /// Training followed by payload symbols.
    pub symbols: Vec<Complex64>,
}

impl Frame {
    pub fn data_segment(&self) -> Option<Segment> {
        self.segments.iter().copied().find(|s| s.kind == SegmentKind::Data)
    }

    pub fn probes(&self) -> Vec<Segment> {
        self.segments
            .iter()
            .copied()
            .filter(|s| matches!(s.kind, SegmentKind::ProbeUp | SegmentKind::ProbeDown))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HfmDirection {
    Up,
    Down,
}

/// Continuous hyperbolic sweep evaluated at time `t` (zero outside `[0, Tg)`).
///
/// The up sweep has instantaneous frequency `f1 / (1 - k t)` with
/// `k = (f2 - f1) / (f2 Tg)`; the down sweep is its time mirror
/// `up(Tg - t)`, i.e. `f2 / (1 + k' t)` with `k' = (f2 - f1) / (f1 Tg)`.
pub fn hfm_at(params: &SignalParams, direction: HfmDirection, t: f64) -> f64 {
    let tg = params.probe_samples() as f64 / params.sample_rate_fs;
    if !(0.0..tg).contains(&t) {
        return 0.0;
    }
    let (f1, f2) = params.band();
    let k = (f2 - f1) / (f2 * tg);
    let u = match direction {
        HfmDirection::Up => t,
        HfmDirection::Down => tg - t,
    };
    let phase = -2.0 * PI * f1 / k * (1.0 - k * u).ln();
    phase.cos()
}

/// Sampled HFM probe of duration `Tg`, unit peak.
pub fn gen_hfm(params: &SignalParams, direction: HfmDirection) -> Result<PassbandSignal> {
    let (low, high) = params.band();
    if low <= 0.0 || params.sample_rate_fs <= 2.0 * high {
        return Err(Error::BandViolation {
            low,
            high,
            sample_rate: params.sample_rate_fs,
        });
    }
    Ok(hfm_replica(params, direction, 0.0))
}

/// The probe as received through a pure time compression `p((1 + h) t)`.
pub fn hfm_replica(params: &SignalParams, direction: HfmDirection, h: f64) -> PassbandSignal {
    let fs = params.sample_rate_fs;
    let tg = params.probe_samples() as f64 / fs;
    let len = ((tg / (1.0 + h)) * fs).ceil() as usize;
    let samples = (0..len)
        .map(|n| hfm_at(params, direction, (1.0 + h) * n as f64 / fs))
        .collect();
    PassbandSignal::new(samples, fs, 0.0)
}

/// Maximal-length sequence from `x^9 + x^5 + 1`, all-ones seed.
pub fn prbs9(len: usize) -> Vec<u8> {
    let mut state: u16 = 0x1ff;
    (0..len)
        .map(|_| {
            let bit = ((state >> 8) ^ (state >> 4)) & 1;
            state = ((state << 1) | bit) & 0x1ff;
            bit as u8
        })
        .collect()
}

/// Root-raised-cosine taps over `±span` symbols, scaled so `Σ g² = sps`.
pub fn rrc_taps(rolloff: f64, sps: usize, span: usize) -> Vec<f64> {
    let half = (span * sps) as i64;
    let b = rolloff;
    let mut g: Vec<f64> = (-half..=half)
        .map(|k| {
            let t = k as f64 / sps as f64;
            if k == 0 {
                1.0 - b + 4.0 * b / PI
            } else if b > 0.0 && ((4.0 * b * t).abs() - 1.0).abs() < 1e-12 {
                b / 2f64.sqrt()
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * b)).sin() + (1.0 - 2.0 / PI) * (PI / (4.0 * b)).cos())
            } else {
                let num = (PI * t * (1.0 - b)).sin() + 4.0 * b * t * (PI * t * (1.0 + b)).cos();
                let den = PI * t * (1.0 - (4.0 * b * t).powi(2));
                num / den
            }
        })
        .collect();
    let energy: f64 = g.iter().map(|v| v * v).sum();
    let scale = (sps as f64 / energy).sqrt();
    g.iter_mut().for_each(|v| *v *= scale);
    g
}

/// Sample index of symbol `i`'s pulse centre within the frame.
pub fn symbol_center(data_start: usize, sps: usize, i: usize) -> usize {
    data_start + i * sps + sps / 2
}

/// Assemble a frame. An empty payload yields a probe-only frame.
pub fn build_frame(params: &SignalParams, payload_bits: &[u8]) -> Result<Frame> {
    params.validate()?;
    let with_data = !payload_bits.is_empty();
    if with_data && payload_bits.len() != params.payload_capacity_bits() {
        return Err(Error::CapacityMismatch {
            expected: params.payload_capacity_bits(),
            got: payload_bits.len(),
        });
    }
    let segments = params.segments(with_data);
    let total = segments.last().map_or(0, |s| s.end());
    let mut samples = vec![0.0; total];
    let up = gen_hfm(params, HfmDirection::Up)?;
    let down = gen_hfm(params, HfmDirection::Down)?;
    for seg in &segments {
        let probe = match seg.kind {
            SegmentKind::ProbeUp => &up,
            SegmentKind::ProbeDown => &down,
            _ => continue,
        };
        samples[seg.start..seg.end()].copy_from_slice(&probe.samples[..seg.len]);
    }

    let mut symbols = Vec::new();
    if let Some(data) = segments.iter().find(|s| s.kind == SegmentKind::Data) {
        symbols = params.training_symbols();
        symbols.extend(params.modulation.map(payload_bits));
        let sps = params.samples_per_symbol();
        let g = rrc_taps(params.rolloff, sps, params.pulse_span);
        let half = (g.len() / 2) as i64;
        let mut base = vec![Complex64::new(0.0, 0.0); total];
        for (i, s) in symbols.iter().enumerate() {
            let c = symbol_center(data.start, sps, i) as i64;
            for (j, gv) in g.iter().enumerate() {
                let n = c + j as i64 - half;
                if n >= 0 && (n as usize) < total {
                    base[n as usize] += s * gv;
                }
            }
        }
        let w = 2.0 * PI * params.carrier_fc / params.sample_rate_fs;
        for (n, b) in base.iter().enumerate() {
            if b.re != 0.0 || b.im != 0.0 {
                samples[n] += (b * Complex64::from_polar(1.0, w * n as f64)).re;
            }
        }
    }
    Ok(Frame {
        segments,
        signal: PassbandSignal::new(samples, params.sample_rate_fs, 0.0),
        payload_bits: payload_bits.to_vec(),
        symbols,
    })
}

/// Output length that holds every delayed, time-scaled copy of `x`.
fn channel_output_len(x: &PassbandSignal, snap: &ChannelSnapshot) -> usize {
    let fs = x.sample_rate;
    let end = x.t0 + x.duration();
    let latest = snap
        .paths
        .iter()
        .map(|p| (end + p.state.delay) / (1.0 + p.state.doppler))
        .fold(end, f64::max);
    ((latest - x.t0) * fs).ceil() as usize + 1
}

/// Noise-free `Σ_p A_p x((1 + a_p) t - τ_p)` on the input's time base.
pub fn apply_paths(x: &PassbandSignal, snap: &ChannelSnapshot) -> PassbandSignal {
    let fs = x.sample_rate;
    let len = channel_output_len(x, snap);
    let mut out = vec![0.0; len];
    let kernel = SincKernel::shared();
    for p in &snap.paths {
        let a = p.state.doppler;
        let alpha = 1.0 + a;
        let offset = (alpha * x.t0 - p.state.delay - x.t0) * fs;
        kernel.accumulate_affine(&mut out, &x.samples, alpha, offset, p.amplitude);
    }
    PassbandSignal::new(out, fs, x.t0)
}

/// Doubly-spread channel plus white Gaussian noise. `snr_db` is the ratio of
/// received signal power over the frame duration to noise power; `+inf`
/// disables the noise.
pub fn apply_channel<R: Rng + ?Sized>(
    x: &PassbandSignal,
    snap: &ChannelSnapshot,
    snr_db: f64,
    rng: &mut R,
) -> PassbandSignal {
    apply_channel_record(x, snap, snr_db, 0, rng)
}

/// [`apply_channel`] with the noisy record extended to at least
/// `record_len` samples, as a receiver listening past the last arrival.
pub fn apply_channel_record<R: Rng + ?Sized>(
    x: &PassbandSignal,
    snap: &ChannelSnapshot,
    snr_db: f64,
    record_len: usize,
    rng: &mut R,
) -> PassbandSignal {
    let mut y = apply_paths(x, snap);
    let power = y.energy() / x.len().max(1) as f64;
    if y.len() < record_len {
        y.samples.resize(record_len, 0.0);
    }
    if snr_db.is_finite() && !x.is_empty() {
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for v in &mut y.samples {
            let w: f64 = rng.sample(StandardNormal);
            *v += sigma * w;
        }
    }
    y
}
