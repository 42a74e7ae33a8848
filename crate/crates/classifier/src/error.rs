use std::path::PathBuf;

use aspire_core::Dims;

use crate::config::Strategy;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] aspire_core::Error),

    #[error("{strategy} needs group labels but dataset `{dataset}` has none")]
    RequiresGroups { strategy: Strategy, dataset: String },

    #[error("training loss became NaN in {stage} epoch {epoch}")]
    NanLoss { stage: &'static str, epoch: usize },

    #[error("cannot train on an empty dataset")]
    EmptyDataset,

    #[error("image dimensions {found} do not match the classifier's {expected}")]
    DimensionMismatch { expected: Dims, found: Dims },

    #[error("images must be at least 4x4, got {0}")]
    ImageTooSmall(Dims),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("{path}: not a valid checkpoint ({reason})")]
    BadCheckpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
