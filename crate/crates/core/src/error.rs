use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input. `line` is 1-based; 0 means the problem is not tied to one line
    /// (for example a PLY body that ends early).
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("point cloud has no points")]
    EmptyCloud,

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),

    #[error("color channel out of [0, 1] at point {0}")]
    ColorOutOfRange(usize),

    #[error("point {point:?} lies outside bounds")]
    OutOfBounds { point: [f64; 3] },

    #[error("fps target {target} exceeds input size {available}")]
    TargetExceedsInput { target: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("strategy {0} requires a curve order")]
    StrategyParamMissing(&'static str),

    #[error("cell index {index:?} does not fit a curve of order {order}")]
    IndexOutOfRange { index: [usize; 3], order: u32 },

    #[error("malformed token sequence: {0}")]
    Grammar(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            line,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
