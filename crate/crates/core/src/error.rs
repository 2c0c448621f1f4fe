use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {reason}")]
    ImageRead { path: PathBuf, reason: String },

    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },

    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("image too small: {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("single-class training set")]
    SingleClass,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cascade stage {stage}: false-positive rate {fpr:.4} above target after {stumps} stumps")]
    StageBudgetExhausted { stage: usize, fpr: f64, stumps: usize },

    #[error("too few samples: have {have}, need {need}")]
    TooFewSamples { have: usize, need: usize },

    #[error("degenerate sample set")]
    DegenerateSamples,

    #[error("segment {index} is not near-horizontal (slope {slope:.4})")]
    NonHorizontalSegment { index: usize, slope: f64 },

    #[error("{0}")]
    Synthesis(String),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
