//! Seeded Monte Carlo experiment runner.
//!
//! A plan fixes the scenario, waveform, tracker, equalizer and metric
//! settings. Each trial simulates ground truth, transmits one frame per
//! epoch through the channel, obtains measurements, tracks the paths and
//! equalizes every frame with each configured method. Trials run on a
//! worker pool with per-trial random streams derived from the plan seed, so
//! results do not depend on the thread count.

mod output;
mod plan;
mod run;

pub use output::{epoch_mean, summary_text, write_qprofiles, write_run, write_tracks_csv};
pub use plan::{ExperimentPlan, MeasurementSource, Method};
pub use run::{
    compare_baselines, execute, measurement_channel, mirror_channel, run, track_file, trial_rng, BerTable,
    FrameResult, FrameStatus, RunReport, TrialFailure, TrialOutcome, COINCIDENT_DELAY, COINCIDENT_DOPPLER,
    LOST_FRAME_BER,
};

use crate::error::Result;
use crate::geometry::ground_truth;
use crate::ptrm::{q_profile, MirrorMode, QFunctionProfile, TrackedChannel};
use crate::waveform::{gen_hfm, HfmDirection};

/// Q-function profiles of the first epoch's true channel under each mirror,
/// built from exact path parameters.
pub fn qprofile(plan: &ExperimentPlan) -> Result<Vec<(&'static str, QFunctionProfile)>> {
    plan.validate_common()?;
    let truth = ground_truth(&plan.scenario, 1)?;
    let ch = TrackedChannel::from_snapshot(&truth[0].resolvable(COINCIDENT_DELAY, COINCIDENT_DOPPLER));
    let probe = gen_hfm(&plan.signal, HfmDirection::Up)?;
    [
        ("conventional", MirrorMode::Conventional),
        ("ps", MirrorMode::PathSpecific),
        ("psc", MirrorMode::Compensated),
    ]
    .into_iter()
    .map(|(name, mode)| Ok((name, q_profile(&ch, &ch, &probe, mode)?)))
    .collect()
}
