use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("dimensions {height}x{width}x{bands} overflow addressable size")]
    DimensionOverflow { height: u64, width: u64, bands: u64 },

    #[error("zero-sized dimension: {0}")]
    ZeroDimension(String),

    #[error("index ({row}, {col}) outside {height}x{width} image")]
    IndexOutOfRange { row: usize, col: usize, height: usize, width: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("zero-norm spectrum")]
    ZeroNorm,

    #[error("pixel ({0}, {1}) is not foreground")]
    NotForeground(usize, usize),

    #[error("k = {k} exceeds pixel count {pixels}")]
    TooManyClusters { k: usize, pixels: usize },

    #[error("unknown rating class {0}")]
    UnknownRating(u32),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
