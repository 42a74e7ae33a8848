//! Data model for labeled, grouped image datasets and the group-robust
//! metrics reported by every pipeline stage.

pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod hash;
pub mod image;
pub mod manifest;
pub mod metrics;

pub use dataset::{content_id, merge, GroupSchema, GroupedDataset, LabeledImage, Origin};
pub use error::{Error, Result};
pub use image::{Dims, Pixels};
pub use metrics::{evaluate, evaluate_ungrouped, Metrics, Predictions};
