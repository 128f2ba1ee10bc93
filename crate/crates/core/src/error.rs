use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used by the command line front end to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: input of length {len} is shorter than kernel {kernel} (empty output)")]
    EmptyOutput {
        op: &'static str,
        len: usize,
        kernel: usize,
    },

    #[error("input length {len} is shorter than stride {stride} of scale {scale}")]
    TooShort {
        scale: usize,
        len: usize,
        stride: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient check failed for {0}")]
    GradCheck(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("checkpoint has bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Shape { .. } | Error::TooShort { .. } => ErrorKind::Config,
            Error::EmptyOutput { .. } | Error::Parse { .. } | Error::Data(_) | Error::Json(_) => {
                ErrorKind::Data
            }
            Error::Domain(_) | Error::NonFinite(_) | Error::GradCheck(_) | Error::Decomposition(_) => ErrorKind::Numeric,
            Error::BadMagic(_) | Error::Version { .. } | Error::Truncated(_) | Error::Io { .. } => {
                ErrorKind::Io
            }
        }
    }
}
