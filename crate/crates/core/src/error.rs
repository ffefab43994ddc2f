//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("generation failed for record {index}: {reason}")]
    Generation { index: u64, reason: String },

    #[error("Cholesky factorization failed after jitter escalation (lengthscale {lengthscale})")]
    Cholesky { lengthscale: f64 },

    #[error("integration diverged: non-finite state at t = {t}")]
    Integration { t: f64 },

    #[error("corruption removed every observation")]
    AllDropped,

    #[error("degenerate series: {0}")]
    Series(String),

    #[error("window {index} produced non-finite output")]
    Composition { index: usize },

    #[error("training failed: {0}")]
    Training(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("imputation failed: {0}")]
    Imputation(String),

    #[error("parse error at {location}: {reason}")]
    Parse { location: String, reason: String },

    #[error("weight file error: {0}")]
    Weights(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
