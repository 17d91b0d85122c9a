use std::path::PathBuf;

use thiserror::Error;

use crate::types::RoadClass;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("{op}: dimension {dim} of size {size} is too small for the window")]
    DimensionUnderflow { op: &'static str, dim: usize, size: usize },

    #[error("max-pool with kernel 3, stride 2, padding 1 needs an even length >= 2, got {0}")]
    OddPoolLength(usize),

    #[error("backward called before a forward pass was recorded")]
    BackwardBeforeForward,

    #[error("target lies outside the cube's {axis} extent (value {value})")]
    OutsideCube { axis: &'static str, value: f64 },

    #[error("feature `{0}` has zero variance")]
    ZeroVariance(&'static str),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("class {0} is absent from the training data")]
    MissingClass(RoadClass),

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("ROC needs both positive and negative labels")]
    SingleClassLabels,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulator could not place an object inside the cube after {0} attempts")]
    PlacementFailed(usize),

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("cube file for frame {frame_id} has {actual} bytes, expected {expected}")]
    CubeSizeMismatch {
        frame_id: u64,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("frame sets differ: ground-truth frames without predictions {missing:?}, predicted frames without ground truth {unexpected:?}")]
    FrameSetMismatch { missing: Vec<u64>, unexpected: Vec<u64> },

    #[error("cube geometry of the model does not match the dataset")]
    GeometryMismatch,

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
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
