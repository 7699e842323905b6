use thiserror::Error;

/// Errors raised by the learner, its numeric building blocks and the
/// simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("availability set is empty")]
    EmptyAvailabilitySet,

    #[error("arm index {index} out of range for {n} arms")]
    ArmOutOfRange { index: usize, n: usize },

    #[error("capping infeasible: {nonzero} nonzero components but k = {k}")]
    InfeasibleCapping { nonzero: usize, k: usize },

    #[error("invalid k = {k} for {n} arms")]
    InvalidK { k: usize, n: usize },

    #[error("only {available} arms available but k = {k}")]
    InsufficientArms { available: usize, k: usize },

    #[error("vector is not in the k-scaled capped simplex: {0}")]
    NotInScaledCappedSimplex(String),

    #[error("exact enumeration over {n} arms exceeds the limit of {limit}")]
    EnumerationTooLarge { n: usize, limit: usize },

    #[error("select called while feedback for the previous round is pending")]
    FeedbackPending,

    #[error("feedback supplied without a pending selection")]
    NoPendingSelection,

    #[error("loss {value} for arm {arm} is outside [0, 1]")]
    LossOutOfRange { arm: usize, value: f64 },

    #[error("feedback does not match the chosen arms: {0}")]
    FeedbackMismatch(String),

    #[error("replay trace ended after {rounds} rounds, horizon is {horizon}")]
    TraceTooShort { rounds: usize, horizon: u64 },

    #[error("malformed trace line {line}: {reason}")]
    TraceFormat { line: usize, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
