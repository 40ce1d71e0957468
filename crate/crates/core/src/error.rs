use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("timestep {t} out of range [{lo}, {hi}]")]
    TimestepOutOfRange { t: usize, lo: usize, hi: usize },
    #[error("timestep ordering: t_prev={t_prev} must be < t={t}")]
    Ordering { t: usize, t_prev: usize },
    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),
    #[error("need at least {needed} frames, got {got}")]
    InsufficientFrames { needed: usize, got: usize },
    #[error("training fault: {0}")]
    TrainingFault(String),
    #[error("adaptation fault: {0}")]
    AdaptationFault(String),
    #[error("degradation kind mismatch: expected {expected}, got {got}")]
    KindMismatch { expected: String, got: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CheckpointCorrupt(String),
    #[error("checkpoint is missing key `{0}`")]
    CheckpointMissingKey(String),
    #[error("missing frame file {0}")]
    MissingFrame(PathBuf),
    #[error("inconsistent resolution in {path}: {detail}")]
    InconsistentResolution { path: PathBuf, detail: String },
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("video id mismatch: {0}")]
    IdMismatch(String),
    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Dimension(_)
            | Error::Parameter(_)
            | Error::ShapeMismatch(_)
            | Error::TimestepOutOfRange { .. }
            | Error::Ordering { .. }
            | Error::KindMismatch { .. } => ErrorClass::Usage,
            Error::NumericalDegeneracy(_)
            | Error::TrainingFault(_)
            | Error::AdaptationFault(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
