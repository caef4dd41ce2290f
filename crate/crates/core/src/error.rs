use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("input shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("structural mismatch: {0}")]
    Structure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error(
        "non-finite loss at epoch {epoch}, step {step} \
         (class {class}, attention {attention}, soft-target {soft_target})"
    )]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        class: f64,
        attention: f64,
        soft_target: f64,
    },
    #[error("ingestion error in {}: {reason}", path.display())]
    Ingest { path: PathBuf, reason: String },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("metric family mismatch: {0}")]
    MetricFamily(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn ingest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
