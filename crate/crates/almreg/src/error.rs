//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum AlmregError {
    /// Dimension of an argument does not match the operator or grid.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A parameter is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration (file, schema or value level).
    #[error("configuration error: {0}")]
    Config(String),

    /// A claimed subgradient fails its defining inequality.
    #[error("invalid subgradient: violation {violation:.3e} exceeds tolerance {tol:.3e}")]
    InvalidSubgradient { violation: f64, tol: f64 },

    /// The convex conjugate of the penalty has no implemented closed form.
    #[error("convex conjugate unavailable for this penalty")]
    ConjugateUnavailable,

    /// Too few usable data points for a fit.
    #[error("need at least {needed} points, got {got}")]
    InsufficientData { needed: usize, got: usize },

    /// A randomized generator exhausted its resampling budget.
    #[error("problem generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    /// Source-condition certification failed.
    #[error("certification failed: {0}")]
    Uncertified(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed CSV input.
    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, AlmregError>;
