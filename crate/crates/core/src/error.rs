use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid label distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated payload: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("record {index}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("record {index}: pixel value {value} outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f32 },

    #[error("soft labels cannot be stored in a UDS file (instance {0})")]
    SoftLabelNotEncodable(usize),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("difficult-sample selection requires a training trace covering {expected} instances (got {actual})")]
    MissingTrace { expected: usize, actual: usize },

    #[error("class {0} has no instances")]
    EmptyClass(usize),

    #[error("requested {requested} categories but only {available} classes other than the label exist")]
    TooManyCategories { requested: usize, available: usize },

    #[error("forgetting instance {forget_index}: only {found} of {requested} categories have remaining instances")]
    CategoriesExhausted {
        forget_index: usize,
        requested: usize,
        found: usize,
    },

    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss or parameters")]
    Diverged { epoch: usize, step: usize },

    #[error("retrain isolation violated: forgetting instance {0} appeared in a training batch")]
    IsolationViolation(usize),

    #[error("metric sets differ: {0}")]
    MetricMismatch(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

impl Error {
    /// Whether the error stems from invalid user input rather than a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Io(_) | Error::Diverged { .. } | Error::IsolationViolation(_) => false,
            _ => true,
        }
    }

    pub(crate) fn in_stage(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
