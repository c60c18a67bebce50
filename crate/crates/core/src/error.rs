use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DalError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DalError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible configuration: {0}")]
    Incompatible(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-deterministic forward pass: {0}")]
    NonDeterministic(String),

    #[error("{0}")]
    Serde(String),
}

impl DalError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        DalError::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DalError::Io { path: path.into(), source }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        DalError::Config { field: field.into(), message: message.into() }
    }
}
