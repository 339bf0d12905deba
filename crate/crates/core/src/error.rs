use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown configuration key(s): {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("stream out of order at index {index}: toa {toa} follows {previous}")]
    StreamOrder { index: usize, previous: u64, toa: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("analysis failed: {message}")]
    Analysis { message: String, profile: Vec<f64> },

    #[error("bad magic in event file header")]
    BadMagic,

    #[error("unsupported event file version {0}")]
    Version(u16),

    #[error("truncated event file: incomplete data at byte offset {offset}")]
    Truncated { offset: u64 },

    #[error("record kind mismatch: file holds {found}, expected {expected}")]
    RecordKind { expected: &'static str, found: &'static str },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI exit reports and service error bodies.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::UnknownKeys(_) => "config",
            Error::StreamOrder { .. } => "stream_order",
            Error::Shape(_) => "shape",
            Error::Analysis { .. } => "analysis",
            Error::BadMagic => "bad_magic",
            Error::Version(_) => "version",
            Error::Truncated { .. } => "truncated",
            Error::RecordKind { .. } => "record_kind",
            Error::Format(_) => "format",
            Error::File { .. } | Error::Io(_) => "io",
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File { path: path.into(), source }
    }
}
