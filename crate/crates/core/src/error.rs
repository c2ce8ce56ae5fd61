use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical divergence at iteration {iteration} while sampling {parameter}")]
    Divergence { iteration: usize, parameter: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("schema fingerprint mismatch: model has {model}, data has {data}")]
    FingerprintMismatch { model: String, data: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
