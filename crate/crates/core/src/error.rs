use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("segment too short: {samples} samples, need at least {frame_length} for one frame")]
    SegmentTooShort { samples: usize, frame_length: usize },

    #[error("negative frequency {0} Hz")]
    NegativeFrequency(f64),

    #[error("unsupported sample rate {got} Hz (expected {expected} Hz)")]
    SampleRate { got: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("batch norm in train mode needs a batch of at least 2, got {0}")]
    BatchTooSmall(usize),

    #[error("label {label} outside class range [0, {n_classes})")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("unknown emotion label {0:?}")]
    UnknownLabel(String),

    #[error("input of {frames} frames is below the model minimum of {min} frames")]
    TooFewFrames { frames: usize, min: usize },

    #[error("segment id sets differ: missing from first {missing_in_first:?}, missing from second {missing_in_second:?}")]
    IdMismatch {
        missing_in_first: Vec<String>,
        missing_in_second: Vec<String>,
    },

    #[error("duplicate segment id {0:?}")]
    DuplicateId(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("wav error in {path}: {msg}")]
    Wav { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
