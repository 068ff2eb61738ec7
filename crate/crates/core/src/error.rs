//! Error type shared by every simulator module.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure categories. Each maps onto one CLI exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operand lies outside its numeric domain.
    #[error("input out of range: {0}")]
    InputDomain(String),

    /// Malformed configuration or network description.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An analog operating condition of the accumulator is violated.
    #[error("constraint violated: {0}")]
    Constraint(String),

    /// More accumulations than the capacitor is sized for.
    #[error("accumulator capacity exceeded: {count} of {limit} accumulations used")]
    Capacity { count: usize, limit: usize },

    /// A weight matrix does not fit the array.
    #[error("placement failed: {0}")]
    Placement(String),

    /// Tensor shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A binary file does not follow its documented layout.
    #[error("{}: format error at byte {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        offset: u64,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    /// Process exit code: 2 usage/config, 3 analog constraint, 4 I/O or format.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InputDomain(_)
            | Error::Config(_)
            | Error::Shape(_)
            | Error::Placement(_)
            | Error::Json(_) => 2,
            Error::Constraint(_) | Error::Capacity { .. } => 3,
            Error::Format { .. } | Error::Io { .. } | Error::Csv(_) => 4,
        }
    }
}
