use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: usize,
        a_height: usize,
        b_width: usize,
        b_height: usize,
    },

    #[error("visible mask is not contained in amodal mask (first violating pixel at row {row}, col {col})")]
    NotSubset { row: usize, col: usize },

    #[error("run lengths sum to {actual}, expected {expected}")]
    RunLengthSum { expected: usize, actual: usize },

    #[error("malformed run-length string: {0}")]
    RunLengthParse(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate box {w}x{h}: both sides must be at least 2 pixels")]
    DegenerateBox { w: usize, h: usize },

    #[error("empty visible mask cannot be completed")]
    EmptyMask,

    #[error("non-finite value in layer `{0}`")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at step {step}: window loss {loss:.4e} exceeds 10x initial {initial:.4e}; reduce the learning rate")]
    Diverged { step: usize, loss: f64, initial: f64 },

    #[error("unknown instance id {0}")]
    UnknownInstance(usize),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
