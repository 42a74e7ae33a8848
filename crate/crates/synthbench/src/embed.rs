//! Deterministic phrase embeddings: a seeded hash vector per token, plus a
//! shipped synonym table whose members sit close to their group's first entry.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

const SYNONYMS: &str = include_str!("../data/synonyms.json");

#[derive(Debug, Clone, Deserialize)]
pub struct SynonymTable {
    pub dimension: usize,
    pub seed: u64,
    /// Norm of the orthogonal offset given to aliases (relative to a unit base).
    pub alias_noise: f32,
    /// Each group lists a base root followed by its aliases.
    pub groups: Vec<Vec<String>>,
}

impl SynonymTable {
    pub fn builtin() -> Self {
        serde_json::from_str(SYNONYMS).expect("shipped synonym table is valid")
    }
}

#[derive(Debug, Clone)]
pub struct OracleEmbedder {
    dim: usize,
    seed: u64,
    table: HashMap<String, Vec<f32>>,
}

impl Default for OracleEmbedder {
    fn default() -> Self {
        Self::new(&SynonymTable::builtin())
    }
}

impl OracleEmbedder {
    pub fn new(table: &SynonymTable) -> Self {
        let mut out = Self {
            dim: table.dimension,
            seed: table.seed,
            table: HashMap::new(),
        };
        for group in &table.groups {
            let Some(base_root) = group.first() else { continue };
            let base = out.hashed(base_root);
            for (i, alias) in group.iter().enumerate().skip(1) {
                let mut noise = out.hashed(&format!("{alias}\u{0}alias{i}"));
                // Remove the component along `base`, then scale.
                let dot = cosine(&noise, &base);
                for (n, b) in noise.iter_mut().zip(&base) {
                    *n -= dot * b;
                }
                normalize(&mut noise);
                let mut v: Vec<f32> = base.iter().zip(&noise).map(|(b, n)| b + table.alias_noise * n).collect();
                normalize(&mut v);
                out.table.insert(alias.clone(), v);
            }
            out.table.insert(base_root.clone(), base);
        }
        out
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    fn hashed(&self, token: &str) -> Vec<f32> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let mut v: Vec<f32> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        v
    }

    fn token(&self, token: &str) -> Vec<f32> {
        self.table.get(token).cloned().unwrap_or_else(|| self.hashed(token))
    }

    /// Unit vector for a root phrase. Table entries match whole phrases;
    /// otherwise the result is the renormalized mean of token vectors.
    pub fn embed(&self, root: &str) -> Vec<f32> {
        let root = root.trim();
        if let Some(v) = self.table.get(root) {
            return v.clone();
        }
        let tokens: Vec<&str> = root.split_whitespace().collect();
        if tokens.is_empty() {
            return self.hashed("");
        }
        let mut acc = vec![0.0f32; self.dim];
        for t in &tokens {
            for (a, x) in acc.iter_mut().zip(self.token(t)) {
                *a += x;
            }
        }
        normalize(&mut acc);
        acc
    }
}

fn normalize(v: &mut [f32]) {
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_and_deterministic() {
        let e = OracleEmbedder::default();
        let v = e.embed("keyboard");
        assert!((cosine(&v, &v) - 1.0).abs() < 1e-6);
        assert_eq!(v, OracleEmbedder::default().embed("keyboard"));
        assert_eq!(v.len(), 64);
    }

    #[test]
    fn synonyms_are_close_and_strangers_are_not() {
        let e = OracleEmbedder::default();
        let table = SynonymTable::builtin();
        for g in &table.groups {
            for alias in &g[1..] {
                assert!(cosine(&e.embed(&g[0]), &e.embed(alias)) >= 0.95, "{alias}");
            }
        }
        assert!(cosine(&e.embed("snow"), &e.embed("keyboard")) < 0.5);
    }
}
