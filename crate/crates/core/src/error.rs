use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("non-finite value at node {0}")]
    NonFinite(usize),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("total masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("transport problem too large: {atoms} atoms exceeds cap {cap}")]
    TooManyAtoms { atoms: usize, cap: usize },

    #[error("transport solver did not finish within {0} pivots")]
    PivotLimit(usize),

    #[error("trajectory covers {available} steps, {needed} requested")]
    TrajectoryTooShort { available: usize, needed: usize },

    #[error("context does not match the model: {0}")]
    ContextMismatch(&'static str),

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("positivity violated: min value {0:e}")]
    Positivity(f64),

    #[error("{what} did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
