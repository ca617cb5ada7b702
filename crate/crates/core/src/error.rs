use std::path::PathBuf;

/// Crate-wide error type. The CLI maps these onto exit codes:
/// `Config`/`Validation`/`Io` are caller problems (exit 2), `Numerical`
/// means the computation itself went bad (exit 1).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Io {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
