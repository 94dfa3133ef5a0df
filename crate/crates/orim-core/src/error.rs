use crate::basis::Family;
use thiserror::Error;

/// Errors shared across the moment pipeline.
#[derive(Debug, Error)]
pub enum OrimError {
    #[error("grid size must be at least 2, got {m}")]
    InvalidGridSize { m: usize },

    #[error("order (p={p}, q={q}) is not a valid {family} pair")]
    InvalidPair { family: Family, p: u32, q: i32 },

    #[error("{family} order {p_max} exceeds the double-precision stability cap {cap}")]
    OrderAboveCap { family: Family, p_max: u32, cap: u32 },

    #[error("radius {r} outside [0, 1]")]
    RadiusOutOfRange { r: f64 },

    #[error("image is {got}x{got2} but the basis grid expects {want}x{want}")]
    SizeMismatch { got: usize, got2: usize, want: usize },

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    IdxMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX payload in {path}: expected {expected} bytes, found {actual}")]
    IdxTruncated {
        path: String,
        expected: usize,
        actual: usize,
    },

    #[error("IDX pair mismatch: {images} images but {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("malformed basis file: {0}")]
    BasisFormat(String),
}
