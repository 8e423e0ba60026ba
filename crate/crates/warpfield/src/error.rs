//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask admits no fully unmasked {patch}x{patch} patch")]
    UnsatisfiableMask { patch: usize },

    #[error("batch has no unmasked pixels; loss undefined")]
    UndefinedBatch,

    #[error("depth normalization failed: {0}")]
    Normalization(String),

    #[error("dataset ingestion failed for {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    Validation(String),

    #[error("checkpoint incompatible: {0}")]
    Incompatibility(String),

    #[error("non-finite value in loss term `{term}`")]
    NonFiniteLoss { term: &'static str },

    #[error("training aborted at iteration {iteration}: {source}")]
    TrainingAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
