use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("zero usable rows")]
    NoUsableRows,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("column has no observations: question {0}")]
    EmptyColumn(usize),

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("sample covariance is singular; use a nonzero jitter")]
    SingularCovariance,

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("variational fit diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("strategy {strategy} cannot be used with the {model} model")]
    StrategyModelMismatch { strategy: String, model: String },

    #[error("unknown covariate: {0}")]
    UnknownCovariate(String),

    #[error("unsupported model file version {0}")]
    ModelVersion(u32),

    #[error("invalid model file: {0}")]
    InvalidModel(String),
}
