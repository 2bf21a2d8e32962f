use thiserror::Error;

/// Largest sample size accepted by exact sign-vector enumeration.
pub const EXACT_ENUMERATION_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exact enumeration supports at most {limit} sample points (got {n}); use the Monte Carlo estimator")]
    SizeLimit { n: usize, limit: usize },

    #[error("optimizer failure: {0}")]
    OptimizerFailure(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
