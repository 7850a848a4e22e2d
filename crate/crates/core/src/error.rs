use std::path::PathBuf;

/// Errors raised across the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("raster must be at least 1x1, got {height}x{width}")]
    EmptyRaster { height: usize, width: usize },

    #[error("raster has {actual} values but {height}x{width} requires {expected}")]
    LengthMismatch {
        height: usize,
        width: usize,
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("value {value} at index {index} is outside [0, 1] or not finite")]
    ValueOutOfRange { index: usize, value: f64 },

    #[error("mask value {value} at index {index} is not binary")]
    NonBinaryMask { index: usize, value: u8 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("image {height}x{width} is not divisible by 4; pad the input first")]
    NotDivisible { height: usize, width: usize },

    #[error("sample `{0}` is not in the unlabeled pool")]
    NotInPool(String),

    #[error("sample `{0}` appears more than once")]
    DuplicateId(String),

    #[error("sample `{0}` has no ground truth")]
    MissingGroundTruth(String),

    #[error("{what} must not be empty")]
    Empty { what: &'static str },

    #[error("image {height}x{width} exceeds the exact-energy limit of {limit} pixels per side")]
    OracleLimit {
        height: usize,
        width: usize,
        limit: usize,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
