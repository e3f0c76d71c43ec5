use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{axis} index {index} out of range 0..{len}")]
    OutOfBounds {
        axis: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The denominator of the disparity-to-depth relation is not positive.
    #[error("disparity {disparity} maps behind the camera")]
    BehindCamera { disparity: f64 },

    #[error("point with depth {z} is behind the camera")]
    PointBehindCamera { z: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("{path}: content hash mismatch (file corrupted or tampered)")]
    Corruption { path: PathBuf },

    #[error("{path}: unsupported format version {found} (supported: {supported})")]
    Version {
        path: PathBuf,
        found: u32,
        supported: u32,
    },

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::OutOfBounds { .. } | Error::Argument(_) => ErrorKind::Argument,
            Error::BehindCamera { .. }
            | Error::PointBehindCamera { .. }
            | Error::Numerical(_)
            | Error::Internal(_) => ErrorKind::Numerical,
            Error::Scene(_)
            | Error::Io { .. }
            | Error::Data { .. }
            | Error::Corruption { .. }
            | Error::Version { .. }
            | Error::Parse(_) => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Argument,
    Data,
    Numerical,
}
