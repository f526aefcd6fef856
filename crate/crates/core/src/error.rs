use thiserror::Error;

/// Errors raised while building or running samplers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in block `{block}`")]
    NonFinite { block: String },
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dimension(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
