//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad parameters, inconsistent shapes, degenerate inputs.
    Validation,
    /// File system or file-format problems.
    Io,
    /// An iterative procedure failed to converge.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("at least {needed} frames required, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("region `{name}` has {size} pixels, at least {needed} required")]
    RegionTooSmall {
        name: &'static str,
        size: usize,
        needed: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("data show no non-classical correlation (NRF = {nrf:.4} +/- {std_error:.4})")]
    NotNonClassical { nrf: f64, std_error: f64 },

    #[error("bad magic bytes {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u8),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_)
            | Error::DimensionMismatch(_)
            | Error::TooFewFrames { .. }
            | Error::RegionTooSmall { .. }
            | Error::Degenerate(_)
            | Error::NotNonClassical { .. } => ErrorClass::Validation,
            Error::NoConvergence { .. } => ErrorClass::Numerical,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::UnsupportedDtype(_)
            | Error::Truncated { .. }
            | Error::Malformed { .. }
            | Error::File { .. }
            | Error::Io(_)
            | Error::Csv(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn file(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::File { path, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
