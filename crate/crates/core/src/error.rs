use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = StacError> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum StacError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mask has no foreground voxel")]
    EmptyMask,

    #[error("mask has no background voxel")]
    FullMask,

    #[error("volume has {voxels} voxels, brute force is limited to {limit}")]
    TooLarge { voxels: usize, limit: usize },

    #[error("axis {axis} has {len} voxel(s), at least 2 are required")]
    TooThin { axis: usize, len: usize },

    #[error("CFL condition violated: dt * max|V| = {step} exceeds {limit}")]
    CflViolation { step: f64, limit: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("none of the minority classes {0:?} occur in the label volume")]
    MinorityAbsent(Vec<u8>),

    #[error("label volume has no foreground class")]
    NoForeground,

    #[error("class {0} has an empty mask in at least one volume")]
    EmptySurface(u8),

    #[error("invalid phantom specification: {0}")]
    SpecInvalid(String),

    #[error("malformed header {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("payload {path} has {actual} bytes, header implies {expected}")]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("unsupported volume file {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl StacError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        StacError::Io {
            path: path.into(),
            source,
        }
    }
}
