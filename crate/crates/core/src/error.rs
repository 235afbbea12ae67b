use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid dimensions: {0}")]
    InvalidDims(String),

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("sample point {0:?} lies outside the grid bounding box")]
    OutOfBounds([f64; 3]),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("corrupt payload: {0}")]
    Corrupt(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("frame {frame}, view {view}: image not found at {path}")]
    MissingView { frame: usize, view: usize, path: PathBuf },

    #[error("image error: {0}")]
    Image(String),

    #[error("no training ray intersects the grid bounding box")]
    NoRays,

    #[error("delta sequence gap: expected frame {expected}, found frame {found}")]
    FrameGap { expected: u32, found: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
