use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structural error in track {track}: {message}")]
    Structure { track: String, message: String },

    #[error("structural error: {0}")]
    Shape(String),

    #[error("reference error: {0}")]
    Reference(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("stage {stage} requires output of stage {requires} (missing {})", path.display())]
    MissingPrerequisite {
        stage: String,
        requires: String,
        path: PathBuf,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
