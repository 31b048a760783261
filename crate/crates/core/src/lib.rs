//! Path-specific acoustic channel tracking.
//!
//! The crate simulates doubly-spread multipath channels from a mirror-reflection
//! ray model, extracts per-path delay/Doppler measurements from HFM probes,
//! tracks the paths with a multi-object-particle multi-Bernoulli filter and
//! equalizes the received signal with path-specific passive time-reversal
//! mirrors followed by an RLS decision-feedback equalizer.
//!
//! Module map:
//!
//! * [`dsp`] FFT correlation and small signal helpers
//! * [`geometry`] image-source ray geometry and ground-truth evolution
//! * [`waveform`] probes, frames and the doubly-spread channel
//! * [`measure`] measurement sets (extracted, synthetic, ingested)
//! * [`tracker`] the multi-Bernoulli path tracker
//! * [`ptrm`] conventional and path-specific time-reversal mirrors
//! * [`receiver`] demodulation, RLS-DFE with phase tracking, BER
//! * [`metrics`] OSPA and per-path MSE
//! * [`harness`] experiment plans, Monte Carlo runs and CSV output

pub mod dsp;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod measure;
pub mod metrics;
pub mod ptrm;
pub mod receiver;
pub mod resample;
pub mod signal;
pub mod tracker;
pub mod waveform;

mod assign;

pub use error::{Error, Result};
pub use geometry::{ChannelSnapshot, PathSpec, PathState, ScenarioConfig};
pub use measure::{Measurement, MeasurementSet};
pub use signal::PassbandSignal;
pub use tracker::{MbComponent, MbDensity, Tracker, TrackerConfig};
pub use harness::{ExperimentPlan, RunReport};
