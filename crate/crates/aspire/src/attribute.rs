//! Probe verdicts, phrase collapsing and per-class top-k selection.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use aspire_classifier::TrainedClassifier;
use aspire_core::{GroupedDataset, LabeledImage};
use serde::{Deserialize, Serialize};

use crate::describe::FeatureExtraction;
use crate::edit::{remove_foreground, swap_background, EditKind, EditRecord, Editor, EditorParams, Verdict};
use crate::error::{Error, Result};
use crate::text;

/// Threshold on root-embedding cosine above which phrases collapse.
pub const COLLAPSE_THRESHOLD: f64 = 0.90;

pub const DEFAULT_K: usize = 3;

/// Run every probe for every holdout image and set verdicts from `clf`.
/// Images without an extraction are skipped; failed edits pass through.
pub fn probe(
    holdout: &GroupedDataset,
    extractions: &BTreeMap<String, FeatureExtraction>,
    clf: &TrainedClassifier,
    editor: &dyn Editor,
    params: &EditorParams,
) -> Result<Vec<EditRecord>> {
    if holdout.is_empty() {
        tracing::warn!("holdout is empty; nothing to probe");
    }
    let mut records = Vec::new();
    for image in holdout.iter() {
        let Some(ex) = extractions.get(image.id()) else { continue };
        for phrase in &ex.foreground {
            records.push(remove_foreground(image, phrase, ex, editor)?);
        }
        if let (Some(b), Some(alt)) = (ex.background.first(), ex.alt_background.first()) {
            records.push(swap_background(image, b, alt, editor, params)?);
        }
    }
    judge(&mut records, clf)?;
    Ok(records)
}

/// Set each pending record's verdict from the classifier's prediction on
/// the edited image.
pub fn judge(records: &mut [EditRecord], clf: &TrainedClassifier) -> Result<()> {
    let edited: Vec<&LabeledImage> = records.iter().filter_map(|r| r.edited.as_ref()).collect();
    let preds = clf.predict_labels(edited)?;
    for r in records.iter_mut() {
        if r.verdict != Verdict::Pending {
            continue;
        }
        if let Some(img) = &r.edited {
            r.verdict = if preds[img.id()] == r.label {
                Verdict::KeptCorrect
            } else {
                Verdict::FlaggedSpurious
            };
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhraseKind {
    Foreground,
    Background,
}

impl From<EditKind> for PhraseKind {
    fn from(k: EditKind) -> Self {
        match k {
            EditKind::RemoveForeground => PhraseKind::Foreground,
            EditKind::SwapBackground => PhraseKind::Background,
        }
    }
}

impl fmt::Display for PhraseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhraseKind::Foreground => "foreground",
            PhraseKind::Background => "background",
        })
    }
}

/// Vector for a phrase root. `None` means the root is out of vocabulary.
pub trait Embedder {
    fn embed(&self, root: &str) -> Option<Vec<f32>>;
}

/// Embeddings from a fixed token table. Multi-word roots not in the table
/// get the renormalized mean of their known token vectors.
#[derive(Debug, Clone, Default)]
pub struct TableEmbedder {
    pub table: HashMap<String, Vec<f32>>,
}

impl Embedder for TableEmbedder {
    fn embed(&self, root: &str) -> Option<Vec<f32>> {
        if let Some(v) = self.table.get(root) {
            return Some(unit(v.clone()));
        }
        let known: Vec<&Vec<f32>> = root.split_whitespace().filter_map(|t| self.table.get(t)).collect();
        let first = known.first()?;
        let mut acc = vec![0.0f32; first.len()];
        for v in &known {
            for (a, x) in acc.iter_mut().zip(unit((*v).clone())) {
                *a += x;
            }
        }
        Some(unit(acc))
    }
}

impl Embedder for synthbench::OracleEmbedder {
    fn embed(&self, root: &str) -> Option<Vec<f32>> {
        Some(synthbench::OracleEmbedder::embed(self, root))
    }
}

fn unit(mut v: Vec<f32>) -> Vec<f32> {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
    }
    v
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseGroup {
    /// Root of the most frequent member phrase (ties: smallest root).
    pub canonical_root: String,
    pub kind: PhraseKind,
    pub members: BTreeSet<String>,
    pub frequency: usize,
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, i: usize) -> usize {
        let mut r = i;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut i = i;
        while self.0[i] != r {
            let next = self.0[i];
            self.0[i] = r;
            i = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            self.0[a.max(b)] = a.min(b);
        }
    }
}

/// Merge phrase variants. Phrases with equal roots merge outright; roots
/// merge when their embeddings have cosine ≥ 0.90, closed transitively.
/// Kinds never merge with each other. Output is sorted by (kind, root).
pub fn collapse(phrases: &[(PhraseKind, String)], embedder: &dyn Embedder) -> Vec<PhraseGroup> {
    // (kind, root) -> phrase -> count
    let mut nodes: BTreeMap<(PhraseKind, String), BTreeMap<String, usize>> = BTreeMap::new();
    for (kind, phrase) in phrases {
        let p = text::normalize(phrase);
        *nodes.entry((*kind, text::root(&p))).or_default().entry(p).or_default() += 1;
    }
    let keys: Vec<&(PhraseKind, String)> = nodes.keys().collect();
    let vecs: Vec<Option<Vec<f32>>> = keys.iter().map(|(_, r)| embedder.embed(r)).collect();
    let mut dsu = Dsu((0..keys.len()).collect());
    for i in 0..keys.len() {
        for j in i + 1..keys.len() {
            if keys[i].0 != keys[j].0 {
                continue;
            }
            if let (Some(a), Some(b)) = (&vecs[i], &vecs[j]) {
                if cosine(a, b) >= COLLAPSE_THRESHOLD {
                    dsu.union(i, j);
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..keys.len() {
        clusters.entry(dsu.find(i)).or_default().push(i);
    }
    let mut out: Vec<PhraseGroup> = clusters
        .values()
        .map(|idx| {
            let mut members = BTreeSet::new();
            let mut frequency = 0;
            let mut best: Option<(usize, &str)> = None;
            for &i in idx {
                let root = keys[i].1.as_str();
                for (phrase, &n) in &nodes[keys[i]] {
                    members.insert(phrase.clone());
                    frequency += n;
                    best = match best {
                        Some((m, r)) if m > n || (m == n && r <= root) => Some((m, r)),
                        _ => Some((n, root)),
                    };
                }
            }
            PhraseGroup {
                canonical_root: best.map(|(_, r)| r.to_owned()).unwrap_or_default(),
                kind: keys[idx[0]].0,
                members,
                frequency,
            }
        })
        .collect();
    out.sort_by(|a, b| (a.kind, &a.canonical_root).cmp(&(b.kind, &b.canonical_root)));
    out
}

/// Order groups by frequency (descending), then canonical root.
pub fn rank(groups: &mut [PhraseGroup]) {
    groups.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then_with(|| a.canonical_root.cmp(&b.canonical_root))
            .then_with(|| a.kind.cmp(&b.kind))
    });
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub canonical_root: String,
    pub kind: PhraseKind,
    pub members: BTreeSet<String>,
    pub frequency: usize,
    pub selected: bool,
    pub record_ids: Vec<String>,
}

impl CatalogEntry {
    pub fn contains(&self, phrase: &str) -> bool {
        self.members.contains(&text::normalize(phrase))
    }
}

/// Per-class ranked phrase groups with the top-k marked. This is the
/// `spurious_catalog.json` artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpuriousCatalog {
    pub k: usize,
    pub classes: BTreeMap<String, Vec<CatalogEntry>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl SpuriousCatalog {
    pub fn top_k(&self, class: &str) -> impl Iterator<Item = &CatalogEntry> {
        self.classes.get(class).into_iter().flatten().filter(|e| e.selected)
    }

    /// Flagged record ids of the selected groups of `class`, sorted.
    pub fn selected_records(&self, class: &str) -> Vec<String> {
        let mut ids: Vec<String> = self.top_k(class).flat_map(|e| e.record_ids.iter().cloned()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn hash(&self) -> String {
        aspire_core::hash::json_hash(self)
    }
}

/// Rank `groups` per class and mark the first `k`. Classes listed in
/// `classes` but absent (or empty) in `groups` get an empty top-k and a
/// warning.
pub fn select_top_k(
    classes: &[String],
    groups: BTreeMap<String, Vec<(PhraseGroup, Vec<String>)>>,
    k: usize,
) -> Result<SpuriousCatalog> {
    if k == 0 {
        return Err(Error::ZeroK);
    }
    let mut out = SpuriousCatalog {
        k,
        classes: BTreeMap::new(),
        warnings: Vec::new(),
    };
    for class in classes {
        let mut gs = groups.get(class).cloned().unwrap_or_default();
        if gs.is_empty() {
            let w = format!("class `{class}` has no flagged edits; it gets no augmentations");
            tracing::warn!("{w}");
            out.warnings.push(w);
        }
        let mut plain: Vec<PhraseGroup> = gs.iter().map(|(g, _)| g.clone()).collect();
        rank(&mut plain);
        let mut entries = Vec::new();
        for (i, g) in plain.into_iter().enumerate() {
            let pos = gs.iter().position(|(x, _)| *x == g).expect("ranked from the same list");
            let (_, mut ids) = gs.swap_remove(pos);
            ids.sort();
            entries.push(CatalogEntry {
                canonical_root: g.canonical_root,
                kind: g.kind,
                members: g.members,
                frequency: g.frequency,
                selected: i < k,
                record_ids: ids,
            });
        }
        out.classes.insert(class.clone(), entries);
    }
    Ok(out)
}

/// Collapse the flagged records of each class and select the top-k.
pub fn build_catalog(
    classes: &[String],
    records: &[EditRecord],
    embedder: &dyn Embedder,
    k: usize,
) -> Result<SpuriousCatalog> {
    let mut per_class: BTreeMap<String, Vec<&EditRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_flagged()) {
        per_class.entry(r.label.clone()).or_default().push(r);
    }
    let mut grouped = BTreeMap::new();
    for (class, recs) in per_class {
        let phrases: Vec<(PhraseKind, String)> = recs.iter().map(|r| (r.kind.into(), r.phrase.clone())).collect();
        let groups = collapse(&phrases, embedder);
        let with_ids: Vec<(PhraseGroup, Vec<String>)> = groups
            .into_iter()
            .map(|g| {
                let ids = recs
                    .iter()
                    .filter(|r| PhraseKind::from(r.kind) == g.kind && g.members.contains(&text::normalize(&r.phrase)))
                    .map(|r| r.id.clone())
                    .collect();
                (g, ids)
            })
            .collect();
        grouped.insert(class, with_ids);
    }
    select_top_k(classes, grouped, k)
}
