use std::path::PathBuf;

use levelfm_core::Error as CoreError;
use thiserror::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Json { .. } => EXIT_VALIDATION,
            CliError::Core(e) => match e {
                CoreError::Config(_) => EXIT_USAGE,
                CoreError::Divergence { .. } => EXIT_DIVERGENCE,
                CoreError::Io { .. } => EXIT_IO,
                CoreError::Csv(c) if matches!(c.kind(), csv::ErrorKind::Io(_)) => EXIT_IO,
                _ => EXIT_VALIDATION,
            },
        }
    }
}
