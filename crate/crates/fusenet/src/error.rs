//! Crate-wide error type, partitioned by how the failure should surface at
//! the process boundary: configuration errors exit 2, data/format/I/O errors
//! exit 3, numeric failures exit 4.

use std::path::PathBuf;

/// Process exit code for configuration errors (bad flags, invalid shapes,
/// contradictory settings).
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for data errors (missing files, malformed formats,
/// unusable datasets).
pub const EXIT_DATA: i32 = 3;
/// Process exit code for numeric failures (non-finite values, divergence).
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The caller asked for something inconsistent: shape mismatches,
    /// out-of-range hyperparameters, malformed configuration files.
    #[error("configuration error: {0}")]
    Config(String),

    /// The data itself is unusable: empty masks, disjoint volumes,
    /// single-class label sets, missing studies.
    #[error("data error: {0}")]
    Data(String),

    /// A binary payload violated its format contract. `offset` is the byte
    /// position at which the violation was detected.
    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },

    /// A computation produced non-finite values or otherwise diverged.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => EXIT_CONFIG,
            Error::Data(_) | Error::Format { .. } | Error::Io { .. } | Error::Json { .. } => {
                EXIT_DATA
            }
            Error::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shorthand for `Err(Error::Config(format!(...)))`-style construction.
#[macro_export]
macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}

/// Shorthand for `Error::Data` construction.
#[macro_export]
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(format!($($arg)*)) };
}

/// Shorthand for `Error::Numeric` construction.
#[macro_export]
macro_rules! numeric_err {
    ($($arg:tt)*) => { $crate::error::Error::Numeric(format!($($arg)*)) };
}
