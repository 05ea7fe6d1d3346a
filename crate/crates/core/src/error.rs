use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a documented precondition or type invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A record in a line-oriented file failed validation.
    #[error("{path}:{line}: {field}: {message}")]
    Record {
        path: String,
        line: usize,
        field: String,
        message: String,
    },

    /// Binary file does not match its expected layout.
    #[error("{path}: {message}")]
    Format { path: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A statistic is mathematically undefined for this input (zero variance, degenerate table).
    #[error("undefined: {0}")]
    Undefined(String),

    /// Training produced non-finite numbers.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// Process exit code: 2 for numeric failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 2,
            _ => 1,
        }
    }
}
