use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): width and height must be positive")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("box {index} ({x1}, {y1}, {x2}, {y2}) lies outside the {width}x{height} image")]
    BoxOutsideImage {
        index: usize,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
        width: usize,
        height: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("target {value} outside [0, {max}]")]
    TargetOutOfRange { value: f64, max: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("stale cache: {0}")]
    StaleCache(String),

    #[error("could not place head {head} after {attempts} attempts under max pairwise IoU {max_iou}")]
    Placement {
        head: usize,
        attempts: usize,
        max_iou: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate image_id {image_id} at line {line}")]
    DuplicateImage { image_id: u32, line: usize },

    #[error("empty scene {0}")]
    EmptyScene(u32),

    #[error("unknown image_id {0}")]
    UnknownImage(u32),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, actual: impl ToString) -> Error {
    Error::Shape {
        context,
        expected: expected.to_string(),
        actual: actual.to_string(),
    }
}
