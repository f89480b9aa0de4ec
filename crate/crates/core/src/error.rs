use thiserror::Error;

/// Errors raised across the simulation and estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("could not isolate eigenvalue {mode}: {reason}")]
    BracketingFailure { mode: usize, reason: String },

    #[error("index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("quadrature did not converge on site {site} (mode {mode}, discrepancy {discrepancy:.3e})")]
    QuadratureNonConvergence {
        site: usize,
        mode: usize,
        discrepancy: f64,
    },

    #[error("degenerate block group {group}: quadratic variation sum is {value}")]
    DegenerateBlock { group: &'static str, value: f64 },

    #[error("Brownian increments were not exported with the observations")]
    MissingBrownianPath,

    #[error("error summary at position {index} is not positive ({value})")]
    NonPositiveError { index: usize, value: f64 },

    #[error("{failed} of {total} replicates failed (last error: {last})")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        last: String,
    },

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
