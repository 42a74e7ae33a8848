use std::collections::BTreeMap;

use aspire_core::{Dims, LabeledImage, Predictions};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{self, Arch, Cache, Params};

const PREDICT_BATCH: usize = 128;

/// Where a trained classifier came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub strategy: String,
    pub config_hash: String,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub class: String,
    pub scores: Vec<f32>,
}

/// Immutable trained network plus its class list and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub(crate) arch: Arch,
    pub(crate) params: Params,
    pub(crate) classes: Vec<String>,
    pub(crate) provenance: Provenance,
    pub(crate) loss_history: Vec<f64>,
}

impl TrainedClassifier {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.arch.height as u32, self.arch.width as u32, self.arch.in_channels as u8)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Mean training loss per epoch of the final training stage.
    pub fn loss_history(&self) -> &[f64] {
        &self.loss_history
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    fn check(&self, item: &LabeledImage) -> Result<()> {
        if item.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: item.dims(),
            });
        }
        Ok(())
    }

    /// Softmax scores for each image, in input order.
    pub fn scores<'a>(&self, images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<Vec<Vec<f32>>> {
        let items: Vec<&LabeledImage> = images.into_iter().collect();
        for it in &items {
            self.check(it)?;
        }
        let mut out = Vec::with_capacity(items.len());
        let mut cache = Cache::default();
        let mut input = Vec::new();
        for chunk in items.chunks(PREDICT_BATCH) {
            let raw: Vec<&[u8]> = chunk.iter().map(|it| it.pixels().as_bytes()).collect();
            net::pack_inputs(&self.arch, &raw, &mut input);
            net::forward(&self.arch, &self.params, &input, chunk.len(), &mut cache);
            net::softmax_rows(&mut cache.logits, self.arch.classes);
            out.extend(cache.logits.chunks(self.arch.classes).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Penultimate-layer features, `[n][features]`.
    pub(crate) fn features(&self, items: &[&LabeledImage]) -> Vec<f32> {
        let mut out = Vec::with_capacity(items.len() * self.arch.features());
        let mut cache = Cache::default();
        let mut input = Vec::new();
        for chunk in items.chunks(PREDICT_BATCH) {
            let raw: Vec<&[u8]> = chunk.iter().map(|it| it.pixels().as_bytes()).collect();
            net::pack_inputs(&self.arch, &raw, &mut input);
            net::forward_features(&self.arch, &self.params, &input, chunk.len(), &mut cache);
            out.extend_from_slice(&cache.features);
        }
        out
    }

    /// Class and score vector per image id. Ties resolve to the lower class index.
    pub fn predict<'a>(&self, images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<BTreeMap<String, Prediction>> {
        let items: Vec<&LabeledImage> = images.into_iter().collect();
        let scores = self.scores(items.iter().copied())?;
        Ok(items
            .iter()
            .zip(scores)
            .map(|(it, s)| {
                let best = argmax(&s);
                (
                    it.id().to_owned(),
                    Prediction {
                        class: self.classes[best].clone(),
                        scores: s,
                    },
                )
            })
            .collect())
    }

    /// Predicted class per id, in the form the metrics functions take.
    pub fn predict_labels<'a>(&self, images: impl IntoIterator<Item = &'a LabeledImage>) -> Result<Predictions> {
        Ok(self
            .predict(images)?
            .into_iter()
            .map(|(id, p)| (id, p.class))
            .collect())
    }
}

pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
