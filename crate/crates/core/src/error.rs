use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DistError>;

#[derive(Debug, Error)]
pub enum DistError {
    #[error("empty vector")]
    EmptyVector,

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbs(String),

    #[error("{0}")]
    MissingBayes(String),

    #[error("{0}")]
    MissingTeacher(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("AUC undefined: labels contain a single class")]
    AucUndefined,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DistError {
    pub fn param(msg: impl Into<String>) -> Self {
        DistError::Parameter(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        DistError::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DistError::Io {
            path: path.into(),
            source,
        }
    }
}
