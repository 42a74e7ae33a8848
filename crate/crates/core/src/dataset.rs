use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{Dims, Pixels};

/// Where an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Train,
    Holdout,
    Edited,
    Generated,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Origin::Train => "train",
            Origin::Holdout => "holdout",
            Origin::Edited => "edited",
            Origin::Generated => "generated",
        };
        f.write_str(s)
    }
}

/// SHA-256 over the raw pixel bytes (row-major, channel-last) followed by the
/// label's UTF-8 bytes, as lowercase hex.
pub fn content_id(pixels: &Pixels, label: &str) -> String {
    let mut h = Sha256::new();
    h.update(pixels.as_bytes());
    h.update(label.as_bytes());
    hex::encode(h.finalize())
}

/// An image with its class label. Pixels are shared, so clones are cheap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    id: String,
    pixels: Arc<Pixels>,
    pub label: String,
    pub group: Option<String>,
    pub origin: Origin,
}

impl LabeledImage {
    pub fn new(pixels: Pixels, label: impl Into<String>, group: Option<String>, origin: Origin) -> Self {
        let label = label.into();
        Self {
            id: content_id(&pixels, &label),
            pixels: Arc::new(pixels),
            label,
            group,
            origin,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    pub fn dims(&self) -> Dims {
        self.pixels.dims()
    }

    pub fn with_group(mut self, group: Option<String>) -> Self {
        self.group = group;
        self
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }
}

pub type GroupSchema = BTreeMap<String, Vec<String>>;

/// A labeled image collection with an ordered class list and optional group
/// annotations. Invariants are checked on every insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    name: String,
    classes: Vec<String>,
    items: Vec<LabeledImage>,
    group_schema: Option<GroupSchema>,
    ids: HashSet<String>,
    dims: Option<Dims>,
}

impl GroupedDataset {
    pub fn new(name: impl Into<String>, classes: Vec<String>, group_schema: Option<GroupSchema>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c) {
                return Err(Error::DuplicateClass(c.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            classes,
            items: Vec::new(),
            group_schema,
            ids: HashSet::new(),
            dims: None,
        })
    }

    pub fn from_items(
        name: impl Into<String>,
        classes: Vec<String>,
        group_schema: Option<GroupSchema>,
        items: impl IntoIterator<Item = LabeledImage>,
    ) -> Result<Self> {
        let mut ds = Self::new(name, classes, group_schema)?;
        for item in items {
            ds.push(item)?;
        }
        Ok(ds)
    }

    /// An empty dataset sharing this one's name, classes and schema.
    pub fn empty_like(&self) -> Self {
        Self {
            name: self.name.clone(),
            classes: self.classes.clone(),
            items: Vec::new(),
            group_schema: self.group_schema.clone(),
            ids: HashSet::new(),
            dims: self.dims,
        }
    }

    pub fn push(&mut self, item: LabeledImage) -> Result<()> {
        self.validate(&item)?;
        if !self.ids.insert(item.id().to_owned()) {
            return Err(Error::DuplicateId { id: item.id().to_owned() });
        }
        self.dims.get_or_insert(item.dims());
        self.items.push(item);
        Ok(())
    }

    fn validate(&self, item: &LabeledImage) -> Result<()> {
        if !self.classes.contains(&item.label) {
            return Err(Error::UnknownClass { label: item.label.clone() });
        }
        if let Some(dims) = self.dims {
            if dims != item.dims() {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    found: item.dims(),
                });
            }
        }
        if let Some(schema) = &self.group_schema {
            let valid = match (&item.group, schema.get(&item.label)) {
                (Some(g), Some(groups)) => groups.contains(g),
                _ => false,
            };
            if !valid {
                return Err(Error::InvalidGroup {
                    id: item.id().to_owned(),
                    label: item.label.clone(),
                    group: item.group.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn items(&self) -> &[LabeledImage] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn group_schema(&self) -> Option<&GroupSchema> {
        self.group_schema.as_ref()
    }

    pub fn is_grouped(&self) -> bool {
        self.group_schema.is_some()
    }

    /// Declared image dimensions; `None` until the first item is added.
    pub fn dims(&self) -> Option<Dims> {
        self.dims
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn get(&self, id: &str) -> Option<&LabeledImage> {
        if !self.ids.contains(id) {
            return None;
        }
        self.items.iter().find(|it| it.id() == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledImage> {
        self.items.iter()
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    /// Item counts per group, keyed by group id. Ungrouped items are skipped.
    pub fn group_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for it in &self.items {
            if let Some(g) = &it.group {
                *counts.entry(g.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.classes.iter().map(|c| (c.clone(), 0)).collect();
        for it in &self.items {
            *counts.entry(it.label.clone()).or_insert(0) += 1;
        }
        counts
    }

    /// A subset keeping the items for which `keep` returns true, in order.
    pub fn filter(&self, mut keep: impl FnMut(&LabeledImage) -> bool) -> Self {
        let mut out = self.empty_like();
        for it in self.items.iter().filter(|it| keep(it)) {
            out.ids.insert(it.id().to_owned());
            out.items.push(it.clone());
        }
        out
    }

    /// Hash over the dataset's identity: name-independent, order-sensitive.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.classes {
            h.update(c.as_bytes());
            h.update([0]);
        }
        for it in &self.items {
            h.update(it.id().as_bytes());
            h.update(it.group.as_deref().unwrap_or("").as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

impl<'a> IntoIterator for &'a GroupedDataset {
    type Item = &'a LabeledImage;
    type IntoIter = std::slice::Iter<'a, LabeledImage>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

/// Concatenate two datasets. Duplicate ids keep the first occurrence and log
/// a warning. Group schemas are unioned per class.
pub fn merge(a: &GroupedDataset, b: &GroupedDataset) -> Result<GroupedDataset> {
    let left: BTreeSet<_> = a.classes.iter().collect();
    let right: BTreeSet<_> = b.classes.iter().collect();
    if left != right {
        return Err(Error::ClassMismatch {
            left: a.classes.clone(),
            right: b.classes.clone(),
        });
    }
    if let (Some(da), Some(db)) = (a.dims, b.dims) {
        if da != db {
            return Err(Error::DimensionMismatch { expected: da, found: db });
        }
    }
    let schema = match (&a.group_schema, &b.group_schema) {
        (None, None) => None,
        (Some(s), None) | (None, Some(s)) => Some(s.clone()),
        (Some(sa), Some(sb)) => {
            let mut out = sa.clone();
            for (class, groups) in sb {
                let entry = out.entry(class.clone()).or_default();
                for g in groups {
                    if !entry.contains(g) {
                        entry.push(g.clone());
                    }
                }
            }
            Some(out)
        }
    };
    let mut out = GroupedDataset::new(a.name.clone(), a.classes.clone(), schema)?;
    out.dims = a.dims.or(b.dims);
    let mut duplicates = 0usize;
    for it in a.items.iter().chain(&b.items) {
        if out.contains(it.id()) {
            duplicates += 1;
            continue;
        }
        out.push(it.clone())?;
    }
    if duplicates > 0 {
        tracing::warn!(duplicates, "merge dropped duplicate image ids (first occurrence kept)");
    }
    Ok(out)
}
