use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value failed validation. `field` is a dotted path.
    #[error("invalid configuration `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("geometry inversion undefined for zero relative speed")]
    InversionUndefined,

    #[error("degenerate transition: radicand {radicand} <= 0")]
    DegenerateTransition { radicand: f64 },

    #[error("probe band [{low} Hz, {high} Hz] not representable at {sample_rate} Hz")]
    BandViolation { low: f64, high: f64, sample_rate: f64 },

    #[error("payload has {got} bits but the data segment holds {expected}")]
    CapacityMismatch { expected: usize, got: usize },

    #[error("innovation covariance is singular")]
    SingularInnovation,

    #[error("Doppler scaling factor {0} <= -1 cannot be compensated")]
    InvalidDoppler(f64),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("frame synchronization failed: {0}")]
    SyncMissing(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("plan file: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
