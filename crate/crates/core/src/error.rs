use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("{record}: {reason}")]
    Coco { record: String, reason: String },

    #[error("rle: {0}")]
    Rle(String),

    #[error("npy: {0}")]
    Npy(String),

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Model(String),

    #[error("{0}")]
    Explain(String),

    #[error("augmentation op {index}: {reason}")]
    Augment { index: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn coco(record: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Coco {
            record: record.into(),
            reason: reason.into(),
        }
    }
}
