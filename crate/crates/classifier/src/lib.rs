//! Image classifier and the group-robust training strategies used for
//! retraining: ERM, GroupDRO, JTT, SUBG and DFR.

mod checkpoint;
pub mod config;
mod error;
mod model;
pub mod net;
mod train;

pub use checkpoint::FORMAT_VERSION;
pub use config::{Strategy, TrainConfig};
pub use error::{Error, Result};
pub use model::{Prediction, Provenance, TrainedClassifier};
pub use train::{error_set, retrain_head, subsample_groups, train, train_observed, Event, Observer};
