//! Synthetic benchmark with planted spurious features: each class has a core
//! shape, and most training images also carry a class-specific corner decal
//! and background color. Oracles caption, edit and generate scenes exactly.

mod bench;
mod embed;
mod error;
pub mod scene;

use std::path::Path;

use aspire_core::{fsutil, manifest};

pub use bench::{
    class_specs, ground_truth, group_id, make_benchmark, parse_background, BenchConfig, Benchmark, ClassSpec, Oracle,
    SceneIndex,
};
pub use embed::{cosine, OracleEmbedder, SynonymTable};
pub use error::{Error, Result};
pub use scene::{render, Color, CueProfile, Patch, SceneSpec, Shape};

pub const TRAIN_MANIFEST: &str = "train/manifest.json";
pub const TEST_MANIFEST: &str = "test/manifest.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const SCENES: &str = "scenes.json";

/// Write manifests, `ground_truth.json` and the scene index under `dir`.
pub fn write_benchmark(bench: &Benchmark, dir: &Path) -> Result<()> {
    manifest::save(&bench.train, &dir.join(TRAIN_MANIFEST))?;
    manifest::save(&bench.test, &dir.join(TEST_MANIFEST))?;
    fsutil::write_json(&dir.join(GROUND_TRUTH), &bench.ground_truth())?;
    fsutil::write_json(&dir.join(SCENES), &bench.scene_index())?;
    Ok(())
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark> {
    let train = manifest::load(&dir.join(TRAIN_MANIFEST))?;
    let test = manifest::load(&dir.join(TEST_MANIFEST))?;
    let index: SceneIndex = fsutil::read_json(&dir.join(SCENES))?;
    Ok(Benchmark::from_index(index, train, test))
}
