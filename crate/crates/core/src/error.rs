use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("teacher weights not found: {0}")]
    MissingWeights(String),

    #[error("shape mismatch for {what}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("shape contract violated at tap {tap}: expected {expected:?}, got {actual:?}")]
    ShapeContractViolation {
        tap: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("preset {preset} is not valid for {arch}")]
    InvalidPreset { arch: String, preset: String },

    #[error("invalid student spec: {0}")]
    InvalidSpec(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("feature list length mismatch: {teacher} teacher maps vs {student} student maps")]
    LengthMismatch { teacher: usize, student: usize },

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        value: f64,
    },

    #[error("no (teacher, student) pairs given")]
    EmptyPairs,

    #[error("missing directory: {}", .0.display())]
    MissingDirectory(PathBuf),

    #[error("defect image {stem} has no ground-truth mask")]
    UnpairedMask { stem: String },

    #[error("cannot decode image {}: {reason}", path.display())]
    UndecodableImage { path: PathBuf, reason: String },

    #[error("AUROC needs both classes, got {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Safetensors(#[from] safetensors::SafeTensorError),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            what: what.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
