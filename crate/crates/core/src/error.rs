use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("directory not found: {0}")]
    MissingDir(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt data: {0}")]
    CorruptData(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("bad magic {0:?}, expected \"OTRE\"")]
    BadMagic([u8; 4]),
    #[error("unsupported weight file version {0}")]
    VersionUnsupported(u16),
    #[error("layer {layer}: {reason}")]
    LayerShape { layer: String, reason: String },
    #[error("layer {0} holds a non-finite parameter")]
    NonFiniteParam(String),
    #[error("layer {layer} has spectral norm {sigma:.6} > 1")]
    LipschitzViolation { layer: String, sigma: f64 },
    #[error("unknown architecture id {0:?}")]
    UnknownArch(String),
    #[error("iterate became non-finite at iteration {iter}")]
    NonFiniteIterate { iter: usize },
    #[error("empty gamma grid")]
    EmptyGrid,
    #[error("malformed labels at line {line}: {reason}")]
    MalformedLabels { line: usize, reason: String },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
