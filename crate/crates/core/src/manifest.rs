//! On-disk dataset format: a JSON manifest with PNG images stored under a
//! sibling `images/` directory, one file per item named by its id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{GroupSchema, GroupedDataset, LabeledImage, Origin};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::image::Pixels;

pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub file: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_schema: Option<GroupSchema>,
    pub items: Vec<ManifestItem>,
    /// Free-form provenance (for example the job that produced the images).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

impl DatasetManifest {
    pub fn describe(ds: &GroupedDataset) -> Self {
        Self {
            name: ds.name().to_owned(),
            classes: ds.classes().to_vec(),
            group_schema: ds.group_schema().cloned(),
            items: ds
                .iter()
                .map(|it| ManifestItem {
                    id: it.id().to_owned(),
                    file: format!("{IMAGE_DIR}/{}.png", it.id()),
                    label: it.label.clone(),
                    group: it.group.clone(),
                    origin: it.origin,
                })
                .collect(),
            provenance: BTreeMap::new(),
        }
    }
}

/// Write `ds` to `manifest_path` and its images next to it. Images already
/// present are not rewritten (names are content hashes).
pub fn save(ds: &GroupedDataset, manifest_path: &Path) -> Result<()> {
    save_with_provenance(ds, manifest_path, BTreeMap::new())
}

pub fn save_with_provenance(
    ds: &GroupedDataset,
    manifest_path: &Path,
    provenance: BTreeMap<String, String>,
) -> Result<()> {
    let root = base_dir(manifest_path);
    let mut manifest = DatasetManifest::describe(ds);
    manifest.provenance = provenance;
    for (item, entry) in ds.iter().zip(&manifest.items) {
        let path = root.join(&entry.file);
        if path.exists() {
            continue;
        }
        let png = item.pixels().encode_png().map_err(|source| Error::Png {
            path: path.clone(),
            source,
        })?;
        fsutil::write_atomic(&path, &png)?;
    }
    fsutil::write_json(manifest_path, &manifest)
}

pub fn load(manifest_path: &Path) -> Result<GroupedDataset> {
    Ok(load_with_manifest(manifest_path)?.0)
}

/// Load a dataset, verifying every stored id against the decoded pixels.
pub fn load_with_manifest(manifest_path: &Path) -> Result<(GroupedDataset, DatasetManifest)> {
    let manifest: DatasetManifest = fsutil::read_json(manifest_path)?;
    let root = base_dir(manifest_path);
    let mut ds = GroupedDataset::new(
        manifest.name.clone(),
        manifest.classes.clone(),
        manifest.group_schema.clone(),
    )?;
    for entry in &manifest.items {
        let path = root.join(&entry.file);
        let pixels = Pixels::decode_png(&fsutil::read(&path)?, &path)?;
        let item = LabeledImage::new(pixels, entry.label.clone(), entry.group.clone(), entry.origin);
        if item.id() != entry.id {
            return Err(Error::HashMismatch {
                path,
                expected: entry.id.clone(),
                actual: item.id().to_owned(),
            });
        }
        ds.push(item)?;
    }
    Ok((ds, manifest))
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
