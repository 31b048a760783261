use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use log::{debug, info, log_enabled, trace, warn, Level};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::plan::{ExperimentPlan, MeasurementSource, Method};
use crate::error::{Error, Result};
use crate::geometry::{ground_truth, ChannelSnapshot, PathState};
use crate::measure::{
    extract_measurements, fill_epochs, ingest_measurements, probe_pair, synth_measurements, ClutterModel, MeasurementSet,
    SurveillanceWindow,
};
use crate::metrics::MetricAccumulator;
use crate::ptrm::{conventional_ptrm, conventional_sparse, ls_cir, ps_ptrm, psc_ptrm, TrackedChannel, Triplet};
use crate::receiver::{ber, demodulate, rls_dfe, synchronize};
use crate::signal::PassbandSignal;
use crate::tracker::{MotionModel, StepReport, TrackEstimate, Tracker};
use crate::waveform::{apply_channel_record, build_frame, gen_hfm};

/// Arrivals closer than this in delay (s) and Doppler are one resolvable path.
pub const COINCIDENT_DELAY: f64 = 1e-9;
pub const COINCIDENT_DOPPLER: f64 = 1e-12;

/// Bit error rate charged for a frame the receiver could not synchronize.
pub const LOST_FRAME_BER: f64 = 0.5;

const STREAM_BITS: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_MEASURE: u64 = 2;
const STREAM_TRACKER: u64 = 3;
const STREAMS_PER_TRIAL: u64 = 4;

/// Independent generator for one purpose within one trial.
pub fn trial_rng(seed: u64, trial: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 * STREAMS_PER_TRIAL + purpose);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameStatus {
    Ok,
    /// The DFE's decision error blew up; the BER is still the measured one.
    Diverged,
    /// Mirror or synchronization failed; BER is charged as [`LOST_FRAME_BER`].
    Lost,
}

impl FrameStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameStatus::Ok => "ok",
            FrameStatus::Diverged => "diverged",
            FrameStatus::Lost => "lost",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub epoch: usize,
    pub method: Method,
    pub ber: f64,
    pub mse_db: f64,
    pub status: FrameStatus,
}

/// Everything one Monte Carlo trial produced.
#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub trial: usize,
    pub measurements: Vec<MeasurementSet>,
    pub steps: Vec<StepReport>,
    /// Epoch-major, in plan method order.
    pub frames: Vec<FrameResult>,
}

impl TrialOutcome {
    /// Mean BER of the `slot`-th configured method over epochs `from..=to`.
    pub fn mean_ber(&self, methods: usize, slot: usize, from: usize, to: usize) -> f64 {
        let picked: Vec<f64> = self
            .frames
            .chunks(methods)
            .filter(|c| (from..=to).contains(&c[0].epoch))
            .map(|c| c[slot].ber)
            .collect();
        picked.iter().sum::<f64>() / picked.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub message: String,
}

/// Method × epoch BER sums; columns follow the plan's method list.
#[derive(Clone, Debug, PartialEq)]
pub struct BerTable {
    pub methods: Vec<Method>,
    sum: Vec<Vec<f64>>,
    frames: Vec<Vec<usize>>,
    lost: Vec<usize>,
}

impl BerTable {
    pub fn new(methods: &[Method], epochs: usize) -> Self {
        Self {
            methods: methods.to_vec(),
            sum: vec![vec![0.0; epochs]; methods.len()],
            frames: vec![vec![0; epochs]; methods.len()],
            lost: vec![0; methods.len()],
        }
    }

    pub fn epochs(&self) -> usize {
        self.sum.first().map_or(0, Vec::len)
    }

    fn add(&mut self, slot: usize, r: &FrameResult) {
        self.sum[slot][r.epoch - 1] += r.ber;
        self.frames[slot][r.epoch - 1] += 1;
        if r.status == FrameStatus::Lost {
            self.lost[slot] += 1;
        }
    }

    /// Mean BER of column `slot` at 1-based `epoch`; NaN without frames.
    pub fn mean(&self, slot: usize, epoch: usize) -> f64 {
        let n = self.frames[slot][epoch - 1];
        if n == 0 {
            f64::NAN
        } else {
            self.sum[slot][epoch - 1] / n as f64
        }
    }

    pub fn frames(&self, slot: usize, epoch: usize) -> usize {
        self.frames[slot][epoch - 1]
    }

    /// Mean BER of column `slot` over every frame.
    pub fn overall(&self, slot: usize) -> f64 {
        let n: usize = self.frames[slot].iter().sum();
        if n == 0 {
            f64::NAN
        } else {
            self.sum[slot].iter().sum::<f64>() / n as f64
        }
    }

    pub fn total_frames(&self, slot: usize) -> usize {
        self.frames[slot].iter().sum()
    }

    pub fn lost_frames(&self, slot: usize) -> usize {
        self.lost[slot]
    }

    /// Column indices sorted by overall BER, best first; ties keep plan order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.methods.len()).collect();
        idx.sort_by(|&a, &b| self.overall(a).total_cmp(&self.overall(b)));
        idx
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub plan: ExperimentPlan,
    /// Simulated ground truth, every geometric path.
    pub truth: Vec<ChannelSnapshot>,
    /// Resolvable truth states per epoch; the reference for all metrics.
    pub truth_states: Vec<Vec<PathState>>,
    pub trials: Vec<TrialOutcome>,
    pub failures: Vec<TrialFailure>,
    pub tracked: MetricAccumulator,
    pub measured: MetricAccumulator,
    pub ber: BerTable,
    pub elapsed: Duration,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Context<'a> {
    plan: &'a ExperimentPlan,
    truth: Vec<ChannelSnapshot>,
    resolvable: Vec<ChannelSnapshot>,
    window: SurveillanceWindow,
    clutter: ClutterModel,
    motion: MotionModel,
    recorded: Option<Vec<MeasurementSet>>,
    training: Vec<Complex64>,
    probe: PassbandSignal,
    probe_start: f64,
    /// Received record length: the frame plus twice the largest delay the
    /// surveillance window admits, so every mirror still covers the frame.
    record_len: usize,
    /// Unique methods, and the unique index of each configured slot.
    unique: Vec<Method>,
    slot_of: Vec<usize>,
}

impl<'a> Context<'a> {
    fn new(plan: &'a ExperimentPlan) -> Result<Self> {
        let truth = ground_truth(&plan.scenario, plan.epochs)?;
        let resolvable = truth
            .iter()
            .map(|s| s.resolvable(COINCIDENT_DELAY, COINCIDENT_DOPPLER))
            .collect();
        let window = SurveillanceWindow::from_scenario(&plan.scenario, plan.epochs)?;
        let clutter = ClutterModel {
            rate_lambda_c: plan.tracker.clutter_rate,
            window,
        };
        let recorded = match plan.measurement_source {
            MeasurementSource::File => {
                let path = plan
                    .measurement_file
                    .as_ref()
                    .ok_or_else(|| Error::config("measurement_file", "missing"))?;
                Some(fill_epochs(&ingest_measurements(path)?, plan.epochs))
            }
            _ => None,
        };
        let (first, _) = probe_pair(&plan.signal);
        let mut unique = Vec::new();
        let slot_of = plan
            .methods
            .iter()
            .map(|m| match unique.iter().position(|u| u == m) {
                Some(i) => i,
                None => {
                    unique.push(*m);
                    unique.len() - 1
                }
            })
            .collect();
        Ok(Self {
            plan,
            truth,
            resolvable,
            window,
            clutter,
            motion: MotionModel::from_scenario(&plan.scenario),
            recorded,
            training: plan.signal.training_symbols(),
            probe: gen_hfm(&plan.signal, first.direction)?,
            probe_start: first.start,
            record_len: plan.signal.segments(true).last().map_or(0, |s| s.end())
                + (2.0 * window.tau_max * plan.signal.sample_rate_fs).ceil() as usize,
            unique,
            slot_of,
        })
    }

    fn needs_waveform(&self) -> bool {
        self.plan.measurement_source == MeasurementSource::Waveform || !self.plan.methods.is_empty()
    }
}

/// Channel used by the PS and PSC mirrors: the tracks judged to exist,
/// every tentative track while none does yet, or before the tracker holds
/// any component at all, the epoch's measurements.
pub fn mirror_channel(report: &StepReport, set: &MeasurementSet) -> TrackedChannel {
    let ch = TrackedChannel::from_tracks(report.epoch, &report.tracks);
    if !ch.is_empty() {
        return ch;
    }
    if report.tracks.is_empty() {
        return measurement_channel(set);
    }
    let tentative: Vec<TrackEstimate> = report
        .tracks
        .iter()
        .map(|t| TrackEstimate {
            existing: true,
            ..t.clone()
        })
        .collect();
    TrackedChannel::from_tracks(report.epoch, &tentative)
}

/// Sparse CIR built directly from one epoch's measurements.
pub fn measurement_channel(set: &MeasurementSet) -> TrackedChannel {
    TrackedChannel {
        epoch: set.epoch,
        triplets: set
            .items
            .iter()
            .filter(|m| m.delay > 0.0)
            .map(|m| Triplet {
                amplitude: m.amplitude.unwrap_or(1.0),
                delay: m.delay,
                doppler: m.doppler,
            })
            .collect(),
    }
}

fn mirror(ctx: &Context, method: Method, y: &PassbandSignal, set: &MeasurementSet, report: &StepReport) -> Result<PassbandSignal> {
    match method {
        Method::LsCptrm => {
            let cir = ls_cir(
                y,
                &ctx.probe,
                ctx.probe_start,
                ctx.window.tau_min,
                ctx.window.tau_max,
                ctx.plan.ls_ridge,
            )?;
            Ok(conventional_ptrm(y, &cir))
        }
        Method::MeasurementCptrm => Ok(conventional_sparse(y, &logged(method, measurement_channel(set)))),
        Method::PsPtrm => Ok(ps_ptrm(y, &logged(method, mirror_channel(report, set)))),
        Method::PscPtrm => psc_ptrm(y, &logged(method, mirror_channel(report, set))),
    }
}

fn logged(method: Method, ch: TrackedChannel) -> TrackedChannel {
    if log_enabled!(Level::Trace) {
        for t in &ch.triplets {
            trace!(
                "epoch {} {method}: A={:.4} tau={:.6} a={:.4e}",
                ch.epoch,
                t.amplitude,
                t.delay,
                t.doppler
            );
        }
    }
    ch
}

fn equalize(
    ctx: &Context,
    method: Method,
    epoch: usize,
    y: &PassbandSignal,
    set: &MeasurementSet,
    report: &StepReport,
    payload: &[u8],
) -> Result<FrameResult> {
    let signal = &ctx.plan.signal;
    let lost = |e: Error| {
        debug!("epoch {epoch} {method}: frame lost: {e}");
        FrameResult {
            epoch,
            method,
            ber: LOST_FRAME_BER,
            mse_db: f64::NAN,
            status: FrameStatus::Lost,
        }
    };
    let z = match mirror(ctx, method, y, set, report) {
        Ok(z) => z,
        Err(e @ Error::InvalidDoppler(_)) => return Ok(lost(e)),
        Err(e) => return Err(e),
    };
    let synced = match synchronize(&z, signal) {
        Ok(s) => s,
        Err(e @ Error::SyncMissing(_)) => return Ok(lost(e)),
        Err(e) => return Err(e),
    };
    let symbols = match demodulate(&synced.signal, signal) {
        Ok(s) => s,
        Err(e @ Error::SyncMissing(_)) => return Ok(lost(e)),
        Err(e) => return Err(e),
    };
    let out = rls_dfe(&symbols, &ctx.plan.dfe, &ctx.training, signal.modulation);
    Ok(FrameResult {
        epoch,
        method,
        ber: ber(&out.payload_bits(signal.modulation), payload)?,
        mse_db: out.mse_db,
        status: if out.diverged { FrameStatus::Diverged } else { FrameStatus::Ok },
    })
}

fn run_trial(ctx: &Context, trial: usize) -> Result<TrialOutcome> {
    let plan = ctx.plan;
    let mut bits_rng = trial_rng(plan.seed, trial, STREAM_BITS);
    let mut noise_rng = trial_rng(plan.seed, trial, STREAM_NOISE);
    let mut measure_rng = trial_rng(plan.seed, trial, STREAM_MEASURE);
    let mut tracker_rng = trial_rng(plan.seed, trial, STREAM_TRACKER);
    let mut tracker = Tracker::new(plan.tracker.clone(), ctx.motion, ctx.clutter.clone())?;
    let r = plan.tracker.r_matrix();
    let capacity = plan.signal.payload_capacity_bits();

    let mut out = TrialOutcome {
        trial,
        measurements: Vec::with_capacity(plan.epochs),
        steps: Vec::with_capacity(plan.epochs),
        frames: Vec::with_capacity(plan.epochs * plan.methods.len()),
    };
    for k in 1..=plan.epochs {
        let received = if ctx.needs_waveform() {
            let bits: Vec<u8> = (0..capacity).map(|_| bits_rng.random_range(0..=1u8)).collect();
            let frame = build_frame(&plan.signal, &bits)?;
            let y = apply_channel_record(&frame.signal, &ctx.truth[k - 1], plan.signal.snr_db, ctx.record_len, &mut noise_rng);
            Some((frame.payload_bits, y))
        } else {
            None
        };
        let set = match plan.measurement_source {
            MeasurementSource::Waveform => {
                let y = &received.as_ref().expect("waveform simulated").1;
                let ex = extract_measurements(y, &plan.signal, &plan.extraction, &ctx.window, k);
                if !ex.sync_ok {
                    debug!("trial {trial} epoch {k}: probe synchronization failed during extraction");
                }
                ex.set
            }
            MeasurementSource::Synthetic => synth_measurements(
                &ctx.resolvable[k - 1],
                plan.tracker.p_detect,
                &ctx.clutter,
                &r,
                &mut measure_rng,
            ),
            MeasurementSource::File => ctx.recorded.as_ref().expect("recorded sets loaded")[k - 1].clone(),
        };
        let report = tracker.step(&set.observations(), &mut tracker_rng)?;
        if let Some((payload, y)) = &received {
            let mut done: Vec<Option<FrameResult>> = vec![None; ctx.unique.len()];
            for (slot, &method) in plan.methods.iter().enumerate() {
                let u = ctx.slot_of[slot];
                if done[u].is_none() {
                    done[u] = Some(equalize(ctx, method, k, y, &set, &report, payload)?);
                }
                out.frames.push(done[u].clone().expect("computed above"));
            }
        }
        out.measurements.push(set);
        out.steps.push(report);
    }
    Ok(out)
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

/// Run every trial of a validated plan and aggregate the results.
pub fn run(plan: &ExperimentPlan) -> Result<RunReport> {
    plan.validate()?;
    execute(plan)
}

/// Like [`run`] but without requiring any equalization method.
pub fn execute(plan: &ExperimentPlan) -> Result<RunReport> {
    plan.validate_common()?;
    let started = Instant::now();
    let ctx = Context::new(plan)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.threads)
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    info!(
        "running {} trials x {} epochs on {} threads",
        plan.trials,
        plan.epochs,
        pool.current_num_threads()
    );
    let results: Vec<std::result::Result<TrialOutcome, String>> = pool.install(|| {
        (0..plan.trials)
            .into_par_iter()
            .map(|t| match catch_unwind(AssertUnwindSafe(|| run_trial(&ctx, t))) {
                Ok(Ok(o)) => Ok(o),
                Ok(Err(e)) => Err(e.to_string()),
                Err(p) => Err(panic_message(p)),
            })
            .collect()
    });

    let truth_states: Vec<Vec<PathState>> = ctx.resolvable.iter().map(|s| s.states()).collect();
    let mut tracked = MetricAccumulator::new(plan.epochs);
    let mut measured = MetricAccumulator::new(plan.epochs);
    let mut ber = BerTable::new(&plan.methods, plan.epochs);
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (t, r) in results.into_iter().enumerate() {
        match r {
            Ok(o) => {
                for k in 0..plan.epochs {
                    let truth = &truth_states[k];
                    tracked.add(k, &o.steps[k].estimates(), truth, &plan.ospa, &plan.scaler);
                    measured.add(k, &o.measurements[k].states(), truth, &plan.ospa, &plan.scaler);
                }
                for (i, f) in o.frames.iter().enumerate() {
                    ber.add(i % plan.methods.len(), f);
                }
                trials.push(o);
            }
            Err(message) => {
                warn!("trial {t} failed: {message}");
                failures.push(TrialFailure { trial: t, message });
            }
        }
    }
    let elapsed = started.elapsed();
    info!("finished in {:.1} s, {} failed trials", elapsed.as_secs_f64(), failures.len());
    Ok(RunReport {
        plan: plan.clone(),
        truth: ctx.truth,
        truth_states,
        trials,
        failures,
        tracked,
        measured,
        ber,
        elapsed,
    })
}

/// Run a plan that lists at least two methods, for a side-by-side BER table.
pub fn compare_baselines(plan: &ExperimentPlan) -> Result<RunReport> {
    if plan.methods.len() < 2 {
        return Err(Error::config("methods", "comparison needs at least two methods"));
    }
    run(plan)
}

/// Track a recorded measurement file with the plan's tracker settings over
/// every epoch the file covers. No frames are simulated.
pub fn track_file(plan: &ExperimentPlan, measurements: &std::path::Path) -> Result<RunReport> {
    let sets = ingest_measurements(measurements)?;
    let mut plan = plan.clone();
    plan.epochs = sets.iter().map(|s| s.epoch).max().unwrap_or(0).max(1);
    plan.measurement_source = MeasurementSource::File;
    plan.measurement_file = Some(measurements.to_path_buf());
    plan.methods.clear();
    execute(&plan)
}
