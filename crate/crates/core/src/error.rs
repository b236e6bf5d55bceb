use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("part {index} is zero or negative ({value})")]
    ZeroPart { index: usize, value: f64 },

    #[error("all parts are zero")]
    AllZero,

    #[error("need at least {min} parts, got {got}")]
    BadDimension { got: usize, min: usize },

    #[error("index {index} out of range for length {len}")]
    BadIndex { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parts sum to {sum}, which departs from the constant {kappa} beyond tolerance")]
    SumMismatch { sum: f64, kappa: f64 },

    #[error("point ({x}, {y}) lies outside the window")]
    OutsideWindow { x: f64, y: f64 },

    #[error("pattern has {0} points; at least 2 are needed")]
    DegeneratePattern(usize),

    #[error("distance grid is empty or degenerate")]
    EmptyGrid,

    #[error("normalizing factor {0} is within tolerance of zero")]
    ZeroNormalizer(f64),

    #[error("every grid point is masked; nothing to rank")]
    AllMasked,

    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o failure: {0}")]
    Io(String),

    #[error("serialization failure: {0}")]
    Serialization(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
