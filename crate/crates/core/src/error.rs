use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid atom number {0}: need a positive integer")]
    InvalidAtomCount(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operator {label} is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { label: String, deviation: f64 },

    #[error("outcome {outcome} has vanishing probability (trace {trace:.3e})")]
    ZeroProbabilityBranch { outcome: &'static str, trace: f64 },

    #[error("state is not normalized (trace {trace:.12})")]
    NotNormalized { trace: f64 },

    #[error("feedback denominator <Jx+> = {value:.3e} is degenerate")]
    DegenerateDenominator { value: f64 },

    #[error("entanglement entropy is only defined for pure joint states")]
    MixedStateEntropy,

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("numerical health failure at step {step}: {reason}")]
    StateHealth { step: usize, reason: String },

    #[error("no trajectory results to aggregate")]
    EmptyResults,

    #[error("malformed sweep spec: {0}")]
    SweepSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
