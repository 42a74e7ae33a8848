#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use aspire::attribute::{Embedder, PhraseKind};
use aspire::pipeline::{AdapterConfig, Adapters, RunConfig, RunData};
use aspire::synth::SynthAdapters;
use aspire::text;
use synthbench::{make_benchmark, BenchConfig, Benchmark};

pub fn bench(per_class: usize, seed: u64) -> Benchmark {
    make_benchmark(&BenchConfig {
        per_class_train: per_class,
        seed,
        ..BenchConfig::default()
    })
    .unwrap()
}

pub fn synth(b: &Benchmark) -> SynthAdapters {
    SynthAdapters::new(b.oracle())
}

pub fn adapters(s: &SynthAdapters) -> Adapters {
    Adapters::resolve(&AdapterConfig::default(), s).unwrap()
}

pub fn data(b: &Benchmark) -> RunData {
    RunData {
        train: b.train.clone(),
        test: b.test.clone(),
    }
}

/// Desk config caching under `cache`.
pub fn config(cache: &Path, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        cache_dir: Some(cache.to_path_buf()),
        ..RunConfig::desk("unused")
    }
}

/// Brute-force oracle: BFS over the pairwise ≥ 0.90 relation between the
/// distinct (kind, root) nodes, returning (members, frequency) per group.
pub fn closure_oracle(phrases: &[(PhraseKind, String)], embedder: &dyn Embedder) -> BTreeSet<(BTreeSet<String>, usize)> {
    let mut nodes: Vec<(PhraseKind, String)> = Vec::new();
    let mut node_of = Vec::new();
    for (kind, p) in phrases {
        let key = (*kind, text::root(&text::normalize(p)));
        let i = nodes.iter().position(|n| *n == key).unwrap_or_else(|| {
            nodes.push(key.clone());
            nodes.len() - 1
        });
        node_of.push(i);
    }
    let vecs: Vec<Option<Vec<f32>>> = nodes.iter().map(|(_, r)| embedder.embed(r)).collect();
    let cos = |a: &[f32], b: &[f32]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
        let n = |v: &[f32]| v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        d / (n(a) * n(b))
    };
    let linked = |i: usize, j: usize| {
        nodes[i].0 == nodes[j].0
            && match (&vecs[i], &vecs[j]) {
                (Some(a), Some(b)) => cos(a, b) >= 0.90,
                _ => false,
            }
    };
    let mut comp = vec![usize::MAX; nodes.len()];
    for start in 0..nodes.len() {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = start;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for j in 0..nodes.len() {
                if comp[j] == usize::MAX && linked(i, j) {
                    comp[j] = start;
                    stack.push(j);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, (BTreeSet<String>, usize)> = BTreeMap::new();
    for ((_, p), &i) in phrases.iter().zip(&node_of) {
        let g = groups.entry(comp[i]).or_default();
        g.0.insert(text::normalize(p));
        g.1 += 1;
    }
    groups.into_values().collect()
}

