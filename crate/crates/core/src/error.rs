use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("invalid normalized box: {reason}")]
    InvalidYoloBox { reason: String },
    #[error("confidence {0} out of range [0,1]")]
    ConfidenceOutOfRange(f64),
    #[error("image dimensions must be positive")]
    ZeroDimension,
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("image dimensions must be positive")]
    ZeroDimension,
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Label { line: usize, reason: String },
    #[error("exposure gain {0} outside [-0.15, 0.15]")]
    GainOutOfBand(f64),
    #[error("duplicate image id {0:?}")]
    IdCollision(String),
    #[error("split counts sum to {expected}, manifest has {actual} samples")]
    CountMismatch { expected: usize, actual: usize },
    #[error("split counts {counts:?} cannot be met without separating augmented copies from their source")]
    UnsatisfiableGrouping { counts: (usize, usize, usize) },
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("sample count must be positive")]
    ZeroSamples,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("IoU threshold {0} outside (0,1]")]
    BadIouThreshold(f64),
    #[error("predictions file, record {record}: {reason}")]
    Predictions { record: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}
