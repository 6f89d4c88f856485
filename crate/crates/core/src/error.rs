use thiserror::Error;

/// Errors produced by the call-out library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid bid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid slot profile: {0}")]
    InvalidSlots(String),

    #[error("invalid scenario field `{field}`: {reason}")]
    InvalidScenario { field: String, reason: String },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("sample set is empty")]
    EmptySample,

    #[error("LP solver stopped after {iterations} iterations (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})")]
    SolverNonConvergence {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
    },

    #[error("basis matrix became singular during refactorization")]
    SingularBasis,

    #[error("time went backwards: now {now} < last update {last}")]
    TimeRegression { now: f64, last: f64 },

    #[error("pairs are not ordered by non-increasing w/u at index {0}")]
    OrderingViolated(usize),

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("unknown policy kind `{0}`")]
    UnknownPolicy(String),

    #[error("duals were learned in {found} mode, expected {expected}")]
    DualModeMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(name: &str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}
