use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum SftError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("invalid shape: {0}")]
    Shape(String),

    #[error("row {row} has zero norm")]
    ZeroNormRow { row: usize },

    #[error("sigma must be positive and finite, got {0}")]
    InvalidSigma(f64),

    #[error("class {0} is empty")]
    EmptyClass(usize),

    #[error("complement of class {0} is empty")]
    EmptyComplement(usize),

    #[error("cut requires two distinct classes, got {0} twice")]
    SameClass(usize),

    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("query {0} has no valid gallery")]
    NoValidGallery(usize),

    #[error("query {0} has no relevant gallery item")]
    NoRelevant(usize),

    #[error("epoch {epoch} out of range for {epochs} epochs")]
    EpochOutOfRange { epoch: usize, epochs: usize },

    #[error("need {needed} identities in the train split, found {found}")]
    NotEnoughIdentities { needed: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, SftError>;

impl SftError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SftError::Io {
            path: path.into(),
            source,
        }
    }
}
