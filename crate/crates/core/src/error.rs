use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operands or containers with incompatible dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A value outside the domain of an operation (division by a non-positive entry, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed input file or unsupported format.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {}: {source}", path.display())]
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

    /// True for failures of the numerical machinery itself, as opposed to bad
    /// inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::NonFinite(_))
    }
}
