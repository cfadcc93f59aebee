use thiserror::Error;

/// Errors produced across the flow-subspace pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A 6-vector basis was requested from a camera without focal lengths.
    #[error("camera has no focal lengths; only the focal-free basis is available")]
    MissingFocal,
    /// Two grids that must share a shape do not.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    /// The system matrix has no regions.
    #[error("region list is empty")]
    EmptyRegions,
    /// Input contains NaN or infinite values.
    #[error("non-finite input in {0}")]
    NonFiniteInput(&'static str),
    /// A gradient evaluated to NaN or infinity.
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },
    /// Depth at a pixel is zero or negative.
    #[error("non-positive depth {depth} at pixel ({u}, {v})")]
    NonPositiveDepth { depth: f64, u: usize, v: usize },
    /// Region shapes overlap or leave uncovered pixels.
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    /// A parameter lies outside its documented range.
    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),
    /// Foreground of the ground truth is empty.
    #[error("ground truth has no foreground pixels")]
    EmptyForeground,
    /// No pixel passes the depth validity mask.
    #[error("no valid ground-truth depth pixels")]
    EmptyValidMask,
    /// File does not start with the expected magic.
    #[error("bad magic: {0}")]
    BadMagic(String),
    /// File ended before its payload was complete.
    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    /// Declared dimensions are implausibly large.
    #[error("dimension overflow: {width}x{height}")]
    DimensionOverflow { width: u64, height: u64 },
    /// Malformed file content not covered by the cases above.
    #[error("parse error: {0}")]
    Parse(String),
    /// Wrapped I/O failure.
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dims(expected: (usize, usize), actual: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }

    /// Short machine-readable kind, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MissingFocal => "MissingFocal",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::EmptyRegions => "EmptyRegions",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::NonFiniteGradient { .. } => "NonFiniteGradient",
            Error::NonPositiveDepth { .. } => "NonPositiveDepth",
            Error::InvalidPartition(_) => "InvalidPartition",
            Error::ParamOutOfRange(_) => "ParamOutOfRange",
            Error::EmptyForeground => "EmptyForeground",
            Error::EmptyValidMask => "EmptyValidMask",
            Error::BadMagic(_) => "BadMagic",
            Error::TruncatedFile { .. } => "TruncatedFile",
            Error::DimensionOverflow { .. } => "DimensionOverflow",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
