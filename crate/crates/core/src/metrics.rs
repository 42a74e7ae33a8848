use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::error::{Error, Result};

/// Predicted class per image id.
pub type Predictions = HashMap<String, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Overall correct / total, not reweighted by group.
    pub average_accuracy: f64,
    pub per_group_accuracy: BTreeMap<String, f64>,
    pub worst_group_accuracy: f64,
}

impl Metrics {
    fn from_tallies(correct: usize, total: usize, tallies: BTreeMap<String, (usize, usize)>) -> Self {
        let per_group_accuracy: BTreeMap<String, f64> = tallies
            .into_iter()
            .map(|(g, (c, t))| (g, c as f64 / t as f64))
            .collect();
        let worst_group_accuracy = per_group_accuracy.values().copied().fold(f64::INFINITY, f64::min);
        Self {
            average_accuracy: correct as f64 / total as f64,
            per_group_accuracy,
            worst_group_accuracy,
        }
    }
}

fn tally<'a>(
    predictions: &Predictions,
    dataset: &'a GroupedDataset,
    key: impl Fn(&'a crate::LabeledImage) -> &'a str,
) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut tallies: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for item in dataset {
        let pred = predictions
            .get(item.id())
            .ok_or_else(|| Error::MissingPrediction { id: item.id().to_owned() })?;
        let hit = *pred == item.label;
        let entry = tallies.entry(key(item).to_owned()).or_insert((0, 0));
        entry.0 += hit as usize;
        entry.1 += 1;
        correct += hit as usize;
    }
    Ok(Metrics::from_tallies(correct, dataset.len(), tallies))
}

/// Group-wise evaluation. Requires every item to carry a group label.
pub fn evaluate(predictions: &Predictions, dataset: &GroupedDataset) -> Result<Metrics> {
    if !dataset.is_grouped() || dataset.iter().any(|it| it.group.is_none()) {
        return Err(Error::Ungrouped {
            name: dataset.name().to_owned(),
        });
    }
    tally(predictions, dataset, |it| it.group.as_deref().unwrap_or_default())
}

/// Like [`evaluate`] but groups by class label.
pub fn evaluate_ungrouped(predictions: &Predictions, dataset: &GroupedDataset) -> Result<Metrics> {
    tally(predictions, dataset, |it| it.label.as_str())
}
