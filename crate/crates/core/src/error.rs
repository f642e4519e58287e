use std::path::PathBuf;

use thiserror::Error;

use crate::datamodel::Level;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{context}: {found}-level data where {expected}-level data is required")]
    LevelMismatch {
        context: String,
        expected: Level,
        found: Level,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("model kind mismatch: file holds `{found}`, expected `{expected}`")]
    KindMismatch { expected: String, found: String },

    #[error("duplicate video id `{0}`")]
    DuplicateVideo(String),

    #[error("unknown video ids (not in ground truth): {}", .0.join(", "))]
    UnknownVideos(Vec<String>),

    #[error("video id sets differ; symmetric difference (first {}): {}", .0.len(), .0.join(", "))]
    VideoSetMismatch(Vec<String>),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("non-finite loss at step {step} (batch example indices {batch:?})")]
    NonFiniteLoss { step: usize, batch: Vec<usize> },

    #[error("label calibration failed: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
