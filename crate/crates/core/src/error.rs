use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value or key is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Shapes or dimensions of the inputs do not line up.
    #[error("structural error: {0}")]
    Structural(String),

    /// A pilot column has zero energy and cannot be normalized.
    #[error("degenerate pilot: column {0} has zero norm")]
    DegeneratePilot(usize),

    /// Threshold calibration is impossible on the given labels.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// A dataset or checkpoint file is malformed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// A checkpoint does not match the requested architecture.
    #[error("checkpoint incompatible: {0}")]
    Incompatible(String),

    /// A numerical routine produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
