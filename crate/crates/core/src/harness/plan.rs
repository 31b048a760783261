use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ScenarioConfig;
use crate::measure::ExtractionConfig;
use crate::metrics::{OspaParams, StateScaler};
use crate::receiver::DfeConfig;
use crate::tracker::TrackerConfig;
use crate::waveform::SignalParams;

/// Equalization method compared by the harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Conventional mirror from a least-squares CIR fit of the leading probe.
    #[serde(rename = "ls-cptrm")]
    LsCptrm,
    /// Conventional mirror from the raw per-epoch measurements.
    #[serde(rename = "measurement-cptrm")]
    MeasurementCptrm,
    #[serde(rename = "ps-ptrm")]
    PsPtrm,
    #[serde(rename = "psc-ptrm")]
    PscPtrm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::LsCptrm, Method::MeasurementCptrm, Method::PsPtrm, Method::PscPtrm];

    pub fn name(self) -> &'static str {
        match self {
            Method::LsCptrm => "ls-cptrm",
            Method::MeasurementCptrm => "measurement-cptrm",
            Method::PsPtrm => "ps-ptrm",
            Method::PscPtrm => "psc-ptrm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("methods", format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementSource {
    /// Matched-filter extraction from the simulated received frames.
    Waveform,
    /// Noisy draws from ground truth with the tracker's `p_D`, `λ_c` and `R`.
    Synthetic,
    /// Recorded `epoch,tau_s,doppler[,amplitude]` CSV.
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub epochs: usize,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub measurement_source: MeasurementSource,
    /// Required when `measurement_source = "file"`; relative paths resolve
    /// against the plan file's directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement_file: Option<PathBuf>,
    /// Ridge term of the LS CIR fit, relative to the mean probe power.
    pub ls_ridge: f64,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
    pub scenario: ScenarioConfig,
    pub signal: SignalParams,
    pub tracker: TrackerConfig,
    pub dfe: DfeConfig,
    pub extraction: ExtractionConfig,
    pub ospa: OspaParams,
    pub scaler: StateScaler,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            epochs: 25,
            trials: 100,
            seed: 1,
            methods: Method::ALL.to_vec(),
            measurement_source: MeasurementSource::Waveform,
            measurement_file: None,
            ls_ridge: 0.1,
            threads: 0,
            scenario: ScenarioConfig::default(),
            signal: SignalParams::simulation(),
            tracker: TrackerConfig::default(),
            dfe: DfeConfig::default(),
            extraction: ExtractionConfig::default(),
            ospa: OspaParams::default(),
            scaler: StateScaler::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Load and validate a plan file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut plan: ExperimentPlan = toml::from_str(&text)?;
        if let (Some(f), Some(dir)) = (&plan.measurement_file, path.parent()) {
            if f.is_relative() {
                plan.measurement_file = Some(dir.join(f));
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("plan serializes")
    }

    /// Validation shared by every command; `run` additionally needs methods.
    pub fn validate_common(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        if !(self.ls_ridge > 0.0 && self.ls_ridge.is_finite()) {
            return Err(Error::config("ls_ridge", "must be positive"));
        }
        if self.measurement_source == MeasurementSource::File && self.measurement_file.is_none() {
            return Err(Error::config(
                "measurement_file",
                "required when measurement_source = \"file\"",
            ));
        }
        self.scenario.validate()?;
        self.signal.validate()?;
        self.tracker.validate()?;
        self.dfe.validate()?;
        self.ospa.validate()?;
        self.scaler.validate()?;
        if self.dfe.training_length != self.signal.training_length {
            return Err(Error::config(
                "dfe.training_length",
                format!("must equal signal.training_length ({})", self.signal.training_length),
            ));
        }
        if self.signal.payload_symbols() == 0 {
            return Err(Error::config("signal.training_length", "leaves no payload symbols"));
        }
        if !(self.extraction.dynamic_range_db > 0.0) {
            return Err(Error::config("extraction.dynamic_range_db", "must be positive"));
        }
        if !(self.extraction.max_pair_ratio_db > 0.0) {
            return Err(Error::config("extraction.max_pair_ratio_db", "must be positive"));
        }
        if let Some(h) = self.extraction.doppler_grid.iter().find(|h| !(h.abs() < 0.1)) {
            return Err(Error::config("extraction.doppler_grid", format!("hypothesis {h} out of range")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        Ok(())
    }
}
