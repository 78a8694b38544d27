use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header key `{key}`: {message}")]
    Format { key: String, message: String },

    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    Size { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("ROI location failed: {0}; fall back to the image center")]
    Locate(String),

    #[error("distance undefined: {0}")]
    UndefinedDistance(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("stratification failed: class {class} has {count} samples, need at least {folds}")]
    Stratification { class: usize, count: usize, folds: usize },

    #[error("no classifier passed the selection threshold {threshold}: {scores}")]
    Selection { threshold: f64, scores: String },

    #[error("graph build failed at node `{node}`: {message}")]
    Build { node: String, message: String },

    #[error("shape trace failed: {0}")]
    Trace(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model file error: {0}")]
    Model(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
