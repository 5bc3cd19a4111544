use thiserror::Error;

use crate::losses::ValidationReport;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("power iteration did not converge after {iterations} iterations (best estimate {estimate:e})")]
    NotConverged { estimate: f64, iterations: usize },

    #[error("problem assumptions violated: {0}")]
    Assumptions(ValidationReport),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("subproblem engine failed: {0}")]
    Engine(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
