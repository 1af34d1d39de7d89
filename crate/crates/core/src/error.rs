use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("cannot normalize: {0}")]
    Normalization(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("duplicate annotation by {annotator_id} for sample {sample_id}")]
    DuplicateAnnotation {
        sample_id: String,
        annotator_id: String,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
