use thiserror::Error;

use crate::types::ImageId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed input: {0}")]
    MalformedInput(String),

    #[error("inconsistent reference: {0}")]
    InconsistentReference(String),

    #[error("box for image {image_id} lies entirely outside the image")]
    OutOfRangeBox { image_id: ImageId },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("evaluation set is empty")]
    EmptyEvaluationSet,

    #[error("dataset contains no ground-truth annotations")]
    NoGroundTruth,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        if err.is_io() {
            Error::Io(err.into())
        } else {
            Error::MalformedInput(err.to_string())
        }
    }
}
