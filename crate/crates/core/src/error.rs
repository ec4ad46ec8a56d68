use std::path::PathBuf;

/// Errors raised across the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed artifact: {0}")]
    Format(String),
    #[error("incompatible artifact: expected {expected}, found {found}")]
    Incompatible { expected: String, found: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric failure at step {step}: {detail}")]
    Numeric { step: usize, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
