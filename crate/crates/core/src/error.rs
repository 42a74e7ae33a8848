use std::path::PathBuf;

use crate::image::Dims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no prediction for image {id}")]
    MissingPrediction { id: String },

    #[error("dataset `{name}` has no group labels; use evaluate_ungrouped")]
    Ungrouped { name: String },

    #[error("cannot evaluate an empty dataset")]
    EmptyDataset,

    #[error("label `{label}` is not one of the dataset classes")]
    UnknownClass { label: String },

    #[error("item {id} has group {group:?}, which is not valid for class `{label}`")]
    InvalidGroup {
        id: String,
        label: String,
        group: Option<String>,
    },

    #[error("duplicate image id {id}")]
    DuplicateId { id: String },

    #[error("image dimensions {found} do not match dataset dimensions {expected}")]
    DimensionMismatch { expected: Dims, found: Dims },

    #[error("pixel buffer holds {len} bytes, expected {expected} for {dims}")]
    BadPixelBuffer { dims: Dims, len: usize, expected: usize },

    #[error("class sets differ: {left:?} vs {right:?}")]
    ClassMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },

    #[error("class list contains `{0}` twice")]
    DuplicateClass(String),

    #[error("content hash of {path} is {actual}, manifest says {expected}")]
    HashMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u8),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
