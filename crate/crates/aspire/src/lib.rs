//! Find the spurious features a classifier relies on by editing held-out
//! images, then generate training images free of them and retrain.

pub mod attribute;
pub mod describe;
pub mod edit;
mod error;
pub mod generate;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod text;

pub use attribute::{build_catalog, collapse, CatalogEntry, Embedder, PhraseGroup, PhraseKind, SpuriousCatalog};
pub use describe::{FeatureExtraction, RuleExtractor, StructuredExtractor};
pub use edit::{EditKind, EditRecord, EditorParams, Verdict};
pub use error::{Error, Result};
pub use generate::{compute_budget, AugmentBudget, BudgetMode, PersonalizationJob};
pub use pipeline::{extract_holdout, run, run_with, Adapters, Run, RunConfig, RunData, RunManifest};
pub use report::{format_delta, Report};
