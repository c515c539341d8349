use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("frame {frame} has no points")]
    DegenerateFrame { frame: usize },

    #[error("cannot sample {requested} points from a set of {available}")]
    SampleCount { requested: usize, available: usize },

    #[error("matrix {index} is not a rotation (orthonormality error {error:.3e})")]
    NotARotation { index: usize, error: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("config hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("dataset error in {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Invalid(_) => "invalid",
            Error::DegenerateFrame { .. } => "degenerate_frame",
            Error::SampleCount { .. } => "sample_count",
            Error::NotARotation { .. } => "not_a_rotation",
            Error::Config(_) => "config",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Dataset { .. } => "dataset",
            Error::Format(_) => "format",
            Error::Io { .. } => "io",
            Error::Tensor(_) => "tensor",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
