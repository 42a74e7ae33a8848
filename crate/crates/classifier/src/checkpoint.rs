//! Checkpoint file: `ASPIRECK` magic, a little-endian u32 format version, a
//! u32 length-prefixed JSON metadata block, then every parameter tensor as
//! little-endian f32 in a fixed order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Provenance, TrainedClassifier};
use crate::net::{Arch, Params};

const MAGIC: &[u8; 8] = b"ASPIRECK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    arch: Arch,
    classes: Vec<String>,
    provenance: Provenance,
    loss_history: Vec<f64>,
}

impl TrainedClassifier {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&Meta {
            arch: self.arch,
            classes: self.classes.clone(),
            provenance: self.provenance.clone(),
            loss_history: self.loss_history.clone(),
        })
        .expect("in-memory serialization cannot fail");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        for (_, t) in self.params.tensors() {
            for v in t {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::BadCheckpoint {
            path: path.to_path_buf(),
            reason: reason.to_owned(),
        };
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or_else(|| bad("missing magic"))?;
        let word = |b: &[u8]| -> Option<u32> { Some(u32::from_le_bytes(b.get(..4)?.try_into().ok()?)) };
        let version = word(rest).ok_or_else(|| bad("truncated header"))?;
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let len = word(&rest[4..]).ok_or_else(|| bad("truncated header"))? as usize;
        let body = &rest[8..];
        let meta: Meta = serde_json::from_slice(body.get(..len).ok_or_else(|| bad("truncated metadata"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let mut floats = body[len..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        let mut params = Params::zeros(&meta.arch);
        let expected: usize = params.tensors().iter().map(|(_, t)| t.len()).sum();
        if body.len() - len != expected * 4 {
            return Err(bad("parameter block has the wrong size"));
        }
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = floats.next().unwrap();
            }
        }
        Ok(TrainedClassifier {
            arch: meta.arch,
            params,
            classes: meta.classes,
            provenance: meta.provenance,
            loss_history: meta.loss_history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        aspire_core::fsutil::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }
}
