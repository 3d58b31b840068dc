use thiserror::Error;

/// Errors raised by the numerical modules (schedules, attention, geometry,
/// theory checks). File-format errors live in [`crate::io::DumpError`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("head dimension must be even and at least 2, got {0}")]
    OddHeadDim(usize),

    #[error("invalid variant parameter: {0}")]
    InvalidParameter(String),

    #[error("rotated plane count {rotated} is outside 1..={planes}")]
    RotatedPlanes { rotated: usize, planes: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid cloud: {0}")]
    InvalidCloud(String),

    #[error("position mismatch: {0}")]
    PositionMismatch(String),

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix is identically zero")]
    ZeroMatrix,

    #[error("reference cloud has numeric rank below 2")]
    RankDeficient,

    #[error("empty selection: {0}")]
    Empty(String),

    #[error("vector is not unit norm (norm = {0})")]
    NotUnit(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
