use std::path::PathBuf;

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("head dim {0} must be a positive multiple of 4")]
    BadHeadDim(usize),
    #[error("cross-axis attention needs a square grid, got {rows}x{cols}")]
    NotSquareGrid { rows: usize, cols: usize },
    #[error("image shape {found:?} does not match expected {expected:?}")]
    BadImageSize {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("need at least 3 sizes to fit a scaling exponent, got {0}")]
    TooFewSizes(usize),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: length {len} is not a multiple of the {record}-byte record size", path.display())]
    TruncatedRecord {
        path: PathBuf,
        len: u64,
        record: usize,
    },

    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint ended early")]
    TruncatedFile,
    #[error("tensor {name}: shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unexpected tensor {0:?} in checkpoint")]
    UnknownTensor(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
