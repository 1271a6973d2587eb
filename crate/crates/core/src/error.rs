use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("triangle {tri} is degenerate (area {area:e})")]
    DegenerateTriangle { tri: usize, area: f64 },

    #[error("triangle {tri} is degenerate at frame {frame}")]
    DegenerateFrame { tri: usize, frame: u32 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unknown frame id {0}")]
    UnknownFrame(u32),

    #[error("surfel {0} already has a child")]
    DuplicateChild(u32),

    #[error("index {index} out of range for {what} (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value while blending primitive {primitive}")]
    NonFinite { primitive: usize },

    #[error("backward pass needs the forward cache of the matching render")]
    MissingForwardCache,

    #[error("inconsistent scene: {0}")]
    Inconsistent(String),

    #[error("{0}")]
    Overflow(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
