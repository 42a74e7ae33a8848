//! Augmentation budget, per-class personalization jobs and generation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use aspire_core::hash::KeyHasher;
use aspire_core::{GroupSchema, GroupedDataset, LabeledImage, Origin, Pixels};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribute::SpuriousCatalog;
use crate::edit::EditRecord;
use crate::error::{Error, Result};

const GENERATION_TEMPLATE: &str = include_str!("../prompts/generation.txt");

pub const DEFAULT_PERSONALIZATION_CAP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// n × the class's minority-group size.
    MinorityMatch,
    /// n × the class's training size.
    ClassMatch,
}

impl fmt::Display for BudgetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetMode::MinorityMatch => "minority_match",
            BudgetMode::ClassMatch => "class_match",
        })
    }
}

impl FromStr for BudgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "minority_match" => Ok(BudgetMode::MinorityMatch),
            "class_match" => Ok(BudgetMode::ClassMatch),
            _ => Err(Error::Config(format!("unknown budget mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentBudget {
    pub mode: BudgetMode,
    pub multiplier: usize,
    pub counts: BTreeMap<String, usize>,
    /// Group given to generated images of each class, when the training
    /// set has groups.
    pub minority_groups: BTreeMap<String, String>,
    pub classes: Vec<String>,
    pub group_schema: Option<GroupSchema>,
}

impl AugmentBudget {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Smallest group of each class (ties: first in schema order).
fn minority_groups(train: &GroupedDataset) -> BTreeMap<String, (String, usize)> {
    let counts = train.group_counts();
    let mut out = BTreeMap::new();
    if let Some(schema) = train.group_schema() {
        for (class, groups) in schema {
            let mut best: Option<(String, usize)> = None;
            for g in groups {
                let n = counts.get(g).copied().unwrap_or(0);
                if best.as_ref().map_or(true, |(_, m)| n < *m) {
                    best = Some((g.clone(), n));
                }
            }
            if let Some(b) = best {
                out.insert(class.clone(), b);
            }
        }
    }
    out
}

pub fn compute_budget(train: &GroupedDataset, n: usize, mode: BudgetMode) -> Result<AugmentBudget> {
    if n == 0 {
        return Err(Error::ZeroMultiplier);
    }
    let grouped = train.is_grouped() && train.iter().all(|it| it.group.is_some());
    let minority = if grouped { minority_groups(train) } else { BTreeMap::new() };
    let counts = match mode {
        BudgetMode::MinorityMatch => {
            if !grouped {
                return Err(Error::MinorityNeedsGroups(train.name().to_owned()));
            }
            train
                .classes()
                .iter()
                .map(|c| (c.clone(), n * minority.get(c).map_or(0, |(_, m)| *m)))
                .collect()
        }
        BudgetMode::ClassMatch => {
            let sizes = train.class_counts();
            train
                .classes()
                .iter()
                .map(|c| (c.clone(), n * sizes.get(c).copied().unwrap_or(0)))
                .collect()
        }
    };
    Ok(AugmentBudget {
        mode,
        multiplier: n,
        counts,
        minority_groups: minority.into_iter().map(|(c, (g, _))| (c, g)).collect(),
        classes: train.classes().to_vec(),
        group_schema: if grouped { train.group_schema().cloned() } else { None },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonalizationJob {
    pub class: String,
    /// The token being learned; always the class label.
    pub token: String,
    /// Flagged edit records whose edited images form the training set.
    pub training_images: Vec<String>,
    /// Members of the selected phrase groups the images were flagged for.
    pub phrases: Vec<String>,
    pub adapter_id: String,
    pub seed: u64,
}

impl PersonalizationJob {
    pub fn hash(&self) -> String {
        aspire_core::hash::json_hash(self)
    }
}

/// One job per class with a non-empty top-k. Training images are sampled
/// by `seed` from the selected groups' flagged records, at most `cap`.
pub fn plan_jobs(catalog: &SpuriousCatalog, adapter_id: &str, cap: usize, seed: u64) -> Vec<PersonalizationJob> {
    let mut jobs = Vec::new();
    for class in catalog.classes.keys() {
        let ids = catalog.selected_records(class);
        if ids.is_empty() {
            continue;
        }
        let class_seed = KeyHasher::new().part(seed.to_le_bytes()).part(class).finish();
        let mut rng = ChaCha8Rng::from_seed(seed_bytes(&class_seed));
        let mut picked: Vec<String> = ids.choose_multiple(&mut rng, cap.min(ids.len())).cloned().collect();
        picked.sort();
        let mut phrases: Vec<String> = catalog.top_k(class).flat_map(|e| e.members.iter().cloned()).collect();
        phrases.sort();
        phrases.dedup();
        jobs.push(PersonalizationJob {
            class: class.clone(),
            token: class.clone(),
            training_images: picked,
            phrases,
            adapter_id: adapter_id.to_owned(),
            seed,
        });
    }
    jobs
}

fn seed_bytes(hex_digest: &str) -> [u8; 32] {
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex_digest[2 * i..2 * i + 2], 16).expect("hex digest");
    }
    out
}

/// A generator fine-tuned for one class.
pub trait GeneratorHandle {
    fn class(&self) -> &str;
    /// Stable identity of the handle: (adapter, class, token, image set, seed).
    fn hash(&self) -> &str;
    fn generate(&self, prompt: &str, count: usize, seed: u64) -> std::result::Result<Vec<Pixels>, String>;
}

pub trait Personalizer {
    fn id(&self) -> &str;
    fn personalize(
        &self,
        job: &PersonalizationJob,
        images: &[&EditRecord],
    ) -> std::result::Result<Box<dyn GeneratorHandle>, String>;
}

/// Identity shared by every handle built from `job` and `images`.
pub fn handle_hash(job: &PersonalizationJob, images: &[&EditRecord]) -> String {
    let mut h = KeyHasher::new().part(&job.adapter_id).part(&job.class).part(&job.token);
    for r in images {
        h = h.part(r.edited_id.as_deref().unwrap_or(&r.id));
    }
    h.part(job.seed.to_le_bytes()).finish()
}

/// Run `job`. `records` must hold every id listed in the job.
pub fn personalize(
    job: &PersonalizationJob,
    records: &BTreeMap<String, EditRecord>,
    adapter: &dyn Personalizer,
) -> Result<Box<dyn GeneratorHandle>> {
    if job.training_images.is_empty() {
        return Err(Error::EmptyJob(job.class.clone()));
    }
    let images: Vec<&EditRecord> = job
        .training_images
        .iter()
        .map(|id| {
            records.get(id).ok_or_else(|| Error::Personalize {
                job: job.hash(),
                reason: format!("unknown edit record {id}"),
            })
        })
        .collect::<Result<_>>()?;
    adapter.personalize(job, &images).map_err(|reason| Error::Personalize { job: job.hash(), reason })
}

pub fn generation_prompt(token: &str) -> String {
    GENERATION_TEMPLATE.trim_end().replace("{token}", token)
}

/// Generate exactly the budgeted number of distinct images for the handle's
/// class. Duplicate outputs are dropped and topped up with further draws.
pub fn generate_augmentations(handle: &dyn GeneratorHandle, budget: &AugmentBudget, seed: u64) -> Result<GroupedDataset> {
    let class = handle.class().to_owned();
    let want = *budget.counts.get(&class).ok_or_else(|| Error::NoBudget(class.clone()))?;
    let mut ds = GroupedDataset::new(
        format!("augment-{class}"),
        budget.classes.clone(),
        budget.group_schema.clone(),
    )?;
    let group = budget.group_schema.as_ref().and_then(|_| budget.minority_groups.get(&class).cloned());
    let prompt = generation_prompt(&class);
    let mut seen = HashSet::new();
    let mut round = 0u64;
    while ds.len() < want {
        let need = want - ds.len();
        let stream = KeyHasher::new().part(seed.to_le_bytes()).part(round.to_le_bytes()).finish();
        let s = u64::from_str_radix(&stream[..16], 16).expect("hex digest");
        let batch = handle
            .generate(&prompt, need, s)
            .map_err(|reason| Error::Generate { class: class.clone(), reason })?;
        if batch.is_empty() {
            return Err(Error::Generate {
                class,
                reason: "generator returned no images".into(),
            });
        }
        for px in batch.into_iter().take(need) {
            let img = LabeledImage::new(px, class.clone(), group.clone(), Origin::Generated);
            if seen.insert(img.id().to_owned()) {
                ds.push(img)?;
            }
        }
        round += 1;
        if round > 64 {
            return Err(Error::Generate {
                class,
                reason: "generator keeps repeating itself".into(),
            });
        }
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt() {
        assert_eq!(generation_prompt("dog sled"), "a photo of dog sled");
    }

    #[test]
    fn modes_parse() {
        assert_eq!("minority-match".parse::<BudgetMode>().unwrap(), BudgetMode::MinorityMatch);
        assert_eq!("class_match".parse::<BudgetMode>().unwrap(), BudgetMode::ClassMatch);
        assert!("both".parse::<BudgetMode>().is_err());
    }
}
