use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("DimensionMismatch: expected {expected:?} (width, height), found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("InsufficientValidRange: {valid} of {total} pixels have a usable range (need at least 1%)")]
    InsufficientValidRange { valid: usize, total: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("NonFiniteLoss: {stage} loss or gradient became non-finite at iteration {iteration}")]
    NonFiniteLoss { stage: &'static str, iteration: usize },

    #[error("TooFewPixels: {count} valid pixels, need at least 2")]
    TooFewPixels { count: usize },

    #[error("ZeroVector: angular error is undefined for an all-zero color")]
    ZeroVector,

    #[error("empty mask: no pixels selected")]
    EmptyMask,

    #[error("UnsupportedFormat: {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },

    #[error("CorruptFile: {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("MissingScale: {path} has no sidecar scale file {sidecar}")]
    MissingScale { path: PathBuf, sidecar: PathBuf },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
