use thiserror::Error;

/// Errors raised by the filtering and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("matrix is not positive definite (factorization failed after jitter retry)")]
    NotPositiveDefinite,

    #[error("innovation covariance is numerically singular")]
    Singular,

    #[error("loss kind `{0}` is not supported by this operation")]
    UnsupportedLoss(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("filter failed at time index {index}: {source}")]
    StepFailed {
        index: usize,
        #[source]
        source: Box<FilterError>,
    },

    #[error("filter `{filter}` failed on {failed} of {runs} Monte-Carlo runs (limit {limit})")]
    TooManyFailures {
        filter: String,
        failed: usize,
        runs: usize,
        limit: f64,
    },
}

pub type Result<T> = std::result::Result<T, FilterError>;
