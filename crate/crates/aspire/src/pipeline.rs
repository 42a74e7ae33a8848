//! Holdout extraction, stage sequencing and the content-addressed run cache.
//!
//! Layout: `<cache root>/<config hash>/<stage>/<artifact hash>.json`, with
//! checkpoints, images and datasets stored next to the JSON under the same
//! hash. An artifact's hash is a key over everything the stage reads, so a
//! finished stage is never recomputed and a rerun replays from disk.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use aspire_classifier::{train, TrainConfig, TrainedClassifier};
use aspire_core::hash::{json_hash, KeyHasher};
use aspire_core::{evaluate, evaluate_ungrouped, fsutil, manifest, merge, GroupedDataset, LabeledImage, Metrics, Origin, Pixels};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attribute::{build_catalog, probe, Embedder, SpuriousCatalog};
use crate::describe::{
    caption, suggest_alt_background, AltSuggester, CaptionBatch, CaptionCache, Captioner, ExtractionCache, Extractor,
    FeatureExtraction, RuleExtractor, StructuredExtractor,
};
use crate::edit::{EditRecord, Editor, EditorParams, Verdict};
use crate::error::{Error, Result};
use crate::generate::{
    compute_budget, generate_augmentations, personalize, plan_jobs, BudgetMode, PersonalizationJob, Personalizer,
    DEFAULT_PERSONALIZATION_CAP,
};
use crate::synth::{SynthAdapters, ADAPTER_ID};

pub const CACHE_ENV: &str = "ASPIRE_CACHE_DIR";
pub const MANIFEST_FORMAT: u32 = 1;
pub const DEFAULT_HOLDOUT_FRACTION: f64 = 0.2;

/// Names of the adapters a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterConfig {
    pub captioner: String,
    /// `rule`, or `structured:<completion adapter>`.
    pub extractor: String,
    pub alt_suggester: String,
    pub editor: String,
    pub generator: String,
    pub embedder: String,
    pub editor_params: EditorParams,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            captioner: ADAPTER_ID.into(),
            extractor: "rule".into(),
            alt_suggester: ADAPTER_ID.into(),
            editor: ADAPTER_ID.into(),
            generator: ADAPTER_ID.into(),
            embedder: ADAPTER_ID.into(),
            editor_params: EditorParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Directory holding `train/manifest.json`, `test/manifest.json` and,
    /// for the synthbench adapters, `scenes.json`.
    pub data_dir: PathBuf,
    pub holdout_fraction: f64,
    pub k: usize,
    pub multiplier: usize,
    pub budget_mode: BudgetMode,
    pub personalization_cap: usize,
    /// Step-1 classifier used for holdout selection and probing.
    pub base: TrainConfig,
    /// Classifier trained on the final training set.
    pub retrain: TrainConfig,
    /// When false, only the retrain classifier is trained, on the original
    /// data: the counterpart row for a comparison report.
    pub augment: bool,
    pub adapters: AdapterConfig,
    /// Master seed. The base classifier, holdout draw, personalization and
    /// generation use it; the retrained classifier uses `seed + 1`.
    pub seed: u64,
    /// Cache root; `ASPIRE_CACHE_DIR` overrides it.
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            holdout_fraction: DEFAULT_HOLDOUT_FRACTION,
            k: crate::attribute::DEFAULT_K,
            multiplier: 1,
            budget_mode: BudgetMode::MinorityMatch,
            personalization_cap: DEFAULT_PERSONALIZATION_CAP,
            base: TrainConfig::default(),
            retrain: TrainConfig::default(),
            augment: true,
            adapters: AdapterConfig::default(),
            seed: 0,
            cache_dir: None,
        }
    }
}

impl RunConfig {
    /// Desk-scale settings for the synthetic benchmark.
    pub fn desk(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            base: TrainConfig::desk(),
            retrain: TrainConfig::desk(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction <= 1.0) {
            return Err(Error::BadFraction(self.holdout_fraction));
        }
        if self.k == 0 {
            return Err(Error::ZeroK);
        }
        if self.multiplier == 0 {
            return Err(Error::ZeroMultiplier);
        }
        if self.personalization_cap == 0 {
            return Err(Error::Config("personalization_cap must be at least 1".into()));
        }
        self.base.validate()?;
        self.retrain.validate()?;
        Ok(())
    }

    pub fn cache_root(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.cache_dir.clone().unwrap_or_else(|| PathBuf::from("cache")),
        }
    }

    fn base_train(&self) -> TrainConfig {
        self.base.clone().with_seed(self.seed)
    }

    fn retrain_train(&self) -> TrainConfig {
        self.retrain.clone().with_seed(self.seed.wrapping_add(1))
    }

    /// Hash of everything that determines the run's outputs: the config
    /// (without paths) and the content of both datasets.
    pub fn hash(&self, data: &RunData) -> String {
        let mut c = self.clone();
        c.data_dir = PathBuf::new();
        c.cache_dir = None;
        KeyHasher::new()
            .part(json_hash(&c))
            .part(data.train.content_hash())
            .part(data.test.content_hash())
            .finish()
    }
}

pub struct RunData {
    pub train: GroupedDataset,
    pub test: GroupedDataset,
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: manifest::load(&dir.join(synthbench::TRAIN_MANIFEST))?,
            test: manifest::load(&dir.join(synthbench::TEST_MANIFEST))?,
        })
    }
}

/// The adapters one run talks to.
pub struct Adapters {
    pub captioner: Box<dyn Captioner>,
    pub extractor: Box<dyn Extractor>,
    pub alt: Box<dyn AltSuggester>,
    pub editor: Box<dyn Editor>,
    pub personalizer: Box<dyn Personalizer>,
    pub embedder: Box<dyn Embedder>,
}

impl AdapterConfig {
    /// Every name must be registered.
    pub fn validate(&self) -> Result<()> {
        let roles = [
            ("captioner", &self.captioner),
            ("alt_suggester", &self.alt_suggester),
            ("editor", &self.editor),
            ("generator", &self.generator),
            ("embedder", &self.embedder),
        ];
        for (role, name) in roles {
            if name != ADAPTER_ID {
                return Err(Error::UnknownAdapter {
                    role,
                    name: name.clone(),
                });
            }
        }
        if !EXTRACTORS.contains(&self.extractor.as_str()) {
            return Err(Error::UnknownAdapter {
                role: "extractor",
                name: self.extractor.clone(),
            });
        }
        Ok(())
    }
}

const EXTRACTORS: [&str; 2] = ["rule", "structured:synthbench"];

impl Adapters {
    /// Resolve adapter names against the synthbench registry.
    pub fn resolve(cfg: &AdapterConfig, synth: &SynthAdapters) -> Result<Self> {
        cfg.validate()?;
        let extractor: Box<dyn Extractor> = if cfg.extractor == "rule" {
            Box::new(RuleExtractor)
        } else {
            Box::new(StructuredExtractor::new(synth.completion()))
        };
        Ok(Self {
            captioner: Box::new(synth.captioner()),
            extractor,
            alt: Box::new(synth.alt_suggester()),
            editor: Box::new(synth.editor()),
            personalizer: Box::new(synth.personalizer()),
            embedder: Box::new(synthbench::OracleEmbedder::default()),
        })
    }
}

/// D_hold: a uniform, seed-determined ⌊p·|D_correct|⌋ sample of the
/// training items `clf` gets right, in dataset order, marked as holdout.
pub fn extract_holdout(train: &GroupedDataset, clf: &TrainedClassifier, p: f64, seed: u64) -> Result<GroupedDataset> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::BadFraction(p));
    }
    let preds = clf.predict_labels(train.iter())?;
    let correct: Vec<&LabeledImage> = train.iter().filter(|it| preds[it.id()] == it.label).collect();
    if correct.is_empty() {
        return Err(Error::NothingCorrect);
    }
    // The epsilon keeps products like 0.1 · 200 from flooring to 19.
    let n = ((p * correct.len() as f64) + 1e-9).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep: HashSet<&str> = correct.choose_multiple(&mut rng, n).map(|it| it.id()).collect();
    let mut out = train.empty_like();
    out.set_name(format!("{}-holdout", train.name()));
    for it in train.iter().filter(|it| keep.contains(it.id())) {
        out.push(it.clone().with_origin(Origin::Holdout))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub holdout: usize,
    pub captioned: usize,
    pub caption_failures: usize,
    pub extraction_failures: usize,
    pub probes: usize,
    pub flagged: usize,
    pub edit_failures: usize,
    /// Selected groups per class, as `kind:root`.
    pub top_k: BTreeMap<String, Vec<String>>,
    pub augmentations: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub config_hash: String,
    pub dataset_hash: String,
    pub test_hash: String,
    /// Strategy of the final classifier.
    pub strategy: String,
    /// Whether the augmentation stage ran.
    pub aspire: bool,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_metrics: Option<Metrics>,
    pub metrics: Metrics,
    /// Wall time of each stage when it was first computed.
    pub timings_ms: BTreeMap<String, u64>,
    pub summary: RunSummary,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn to_bytes(&self) -> Vec<u8> {
        fsutil::to_json_bytes(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(fsutil::read_json(path)?)
    }

    /// Stages whose artifact is missing under `run_dir`.
    pub fn missing_artifacts(&self, run_dir: &Path) -> Vec<String> {
        let store = Store { root: run_dir.to_path_buf() };
        self.artifacts
            .iter()
            .filter(|(stage, key)| !store.json(stage, key).exists())
            .map(|(stage, _)| stage.clone())
            .collect()
    }
}

/// Result of [`run`]: the manifest and the directory holding the run cache.
#[derive(Debug, Clone)]
pub struct Run {
    pub manifest: RunManifest,
    pub dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    elapsed_ms: u64,
    value: T,
}

struct Store {
    root: PathBuf,
}

impl Store {
    fn json(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(stage).join(format!("{key}.json"))
    }

    fn blob(&self, stage: &str, name: &str) -> PathBuf {
        self.root.join(stage).join(name)
    }

    fn load<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Result<Option<(T, u64)>> {
        let p = self.json(stage, key);
        if !p.exists() {
            return Ok(None);
        }
        let e: Envelope<T> = fsutil::read_json(&p)?;
        Ok(Some((e.value, e.elapsed_ms)))
    }

    fn save<T: Serialize>(&self, stage: &str, key: &str, value: &T, elapsed_ms: u64) -> Result<()> {
        Ok(fsutil::write_json(&self.json(stage, key), &Envelope { elapsed_ms, value })?)
    }
}

/// Tracks progress so a failure can name the last stage that finished.
struct Driver {
    store: Store,
    artifacts: BTreeMap<String, String>,
    timings: BTreeMap<String, u64>,
    last_good: Option<(String, String)>,
}

impl Driver {
    /// Load the stage's value from the cache or compute and store it.
    fn stage<T, F>(&mut self, stage: &'static str, key: &str, compute: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(&Store) -> Result<T>,
    {
        let outcome = match self.store.load::<T>(stage, key) {
            Ok(Some((v, ms))) => {
                tracing::debug!(stage, key, "cache hit");
                Ok((v, ms))
            }
            Ok(None) => {
                tracing::info!(stage, "running");
                let t = Instant::now();
                compute(&self.store).and_then(|v| {
                    let ms = t.elapsed().as_millis() as u64;
                    self.store.save(stage, key, &v, ms)?;
                    Ok((v, ms))
                })
            }
            Err(e) => Err(e),
        };
        match outcome {
            Ok((v, ms)) => {
                self.artifacts.insert(stage.to_owned(), key.to_owned());
                self.timings.insert(stage.to_owned(), ms);
                self.last_good = Some((stage.to_owned(), key.to_owned()));
                Ok(v)
            }
            Err(source) => Err(Error::Stage {
                stage,
                last_good: match &self.last_good {
                    Some((s, k)) => format!("{s} {k}"),
                    None => "none".into(),
                },
                source: Box::new(source),
            }),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelInfo {
    checkpoint: String,
    loss_history: Vec<f64>,
}

fn model_stage(
    d: &mut Driver,
    stage: &'static str,
    key: &str,
    data: &GroupedDataset,
    cfg: &TrainConfig,
) -> Result<TrainedClassifier> {
    let file = format!("{key}.ckpt");
    d.stage(stage, key, |s| {
        let clf = train(data, cfg)?;
        clf.save(&s.blob(stage, &file))?;
        Ok(ModelInfo {
            checkpoint: file.clone(),
            loss_history: clf.loss_history().to_vec(),
        })
    })?;
    let path = d.store.blob(stage, &file);
    TrainedClassifier::load(&path).map_err(|e| Error::Stage {
        stage,
        last_good: "checkpoint unreadable".into(),
        source: Box::new(e.into()),
    })
}

fn metrics_for(clf: &TrainedClassifier, test: &GroupedDataset) -> Result<Metrics> {
    let preds = clf.predict_labels(test.iter())?;
    if test.is_grouped() && test.iter().all(|it| it.group.is_some()) {
        Ok(evaluate(&preds, test)?)
    } else {
        Ok(evaluate_ungrouped(&preds, test)?)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Extractions {
    items: BTreeMap<String, FeatureExtraction>,
    failures: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Augmentations {
    manifest: String,
    jobs: Vec<String>,
    counts: BTreeMap<String, usize>,
    warnings: Vec<String>,
}

/// Write edit records as JSON plus one PNG per edited image.
pub fn save_edits(dir: &Path, records: &[EditRecord]) -> Result<()> {
    for r in records {
        if let (Some(img), Some(id)) = (&r.edited, &r.edited_id) {
            let path = dir.join(format!("{id}.png"));
            if !path.exists() {
                let png = img.pixels().encode_png().map_err(|e| Error::Config(format!("png encoding: {e}")))?;
                fsutil::write_atomic(&path, &png)?;
            }
        }
    }
    Ok(())
}

/// Re-attach edited images to records read back from JSON.
pub fn attach_edits(dir: &Path, records: &mut [EditRecord]) -> Result<()> {
    for r in records.iter_mut() {
        if let Some(id) = &r.edited_id {
            let path = dir.join(format!("{id}.png"));
            let px = Pixels::decode_png(&fsutil::read(&path)?, &path)?;
            let img = LabeledImage::new(px, r.label.clone(), None, Origin::Edited);
            if img.id() != id {
                return Err(aspire_core::Error::HashMismatch {
                    path,
                    expected: id.clone(),
                    actual: img.id().to_owned(),
                }
                .into());
            }
            r.edited = Some(img);
        }
    }
    Ok(())
}

/// Load data and synthbench adapters from `cfg.data_dir` and run.
pub fn run(cfg: &RunConfig) -> Result<Run> {
    cfg.validate()?;
    cfg.adapters.validate()?;
    let data = RunData::load(&cfg.data_dir)?;
    let index: synthbench::SceneIndex = fsutil::read_json(&cfg.data_dir.join(synthbench::SCENES))?;
    let synth = SynthAdapters::new(synthbench::Oracle::new(&index));
    let adapters = Adapters::resolve(&cfg.adapters, &synth)?;
    run_with(cfg, &data, &adapters)
}

/// Run every stage with the given adapters, reusing cached artifacts.
pub fn run_with(cfg: &RunConfig, data: &RunData, adapters: &Adapters) -> Result<Run> {
    cfg.validate()?;
    let config_hash = cfg.hash(data);
    let dir = cfg.cache_root().join(&config_hash);
    let mut d = Driver {
        store: Store { root: dir.clone() },
        artifacts: BTreeMap::new(),
        timings: BTreeMap::new(),
        last_good: None,
    };
    let train_hash = data.train.content_hash();
    let test_hash = data.test.content_hash();
    let mut summary = RunSummary::default();
    let mut warnings = Vec::new();
    let retrain_cfg = cfg.retrain_train();

    let (base_metrics, final_key, final_data) = if cfg.augment {
        let base_cfg = cfg.base_train();
        let base_key = KeyHasher::new().part("base").part(&train_hash).part(base_cfg.hash()).finish();
        let base = model_stage(&mut d, "base_model", &base_key, &data.train, &base_cfg)?;

        let key = KeyHasher::new().part(&base_key).part(&test_hash).finish();
        let base_metrics: Metrics = d.stage("base_metrics", &key, |_| metrics_for(&base, &data.test))?;

        let holdout_key = KeyHasher::new()
            .part(&base_key)
            .part(cfg.holdout_fraction.to_le_bytes())
            .part(cfg.seed.to_le_bytes())
            .finish();
        let ids: Vec<String> = d.stage("holdout", &holdout_key, |_| {
            let h = extract_holdout(&data.train, &base, cfg.holdout_fraction, cfg.seed)?;
            Ok(h.iter().map(|it| it.id().to_owned()).collect())
        })?;
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let mut holdout = data.train.empty_like();
        for it in data.train.iter().filter(|it| keep.contains(it.id())) {
            holdout.push(it.clone().with_origin(Origin::Holdout)).map_err(Error::from)?;
        }
        summary.holdout = holdout.len();
        if holdout.is_empty() {
            warnings.push("holdout is empty; nothing was probed".to_owned());
        }

        let captions_key = KeyHasher::new().part(&holdout_key).part(adapters.captioner.id()).finish();
        let captions: CaptionBatch = d.stage("captions", &captions_key, |_| {
            let items: Vec<&LabeledImage> = holdout.iter().collect();
            Ok(caption(&items, adapters.captioner.as_ref(), &mut CaptionCache::default()))
        })?;
        summary.captioned = captions.records.len();
        summary.caption_failures = captions.failures.len();
        for f in &captions.failures {
            warnings.push(format!("caption failed for {}: {}", f.image_id, f.reason));
        }

        let extract_key = KeyHasher::new()
            .part(&captions_key)
            .part(adapters.extractor.id())
            .part(adapters.alt.id())
            .finish();
        let extractions: Extractions = d.stage("extractions", &extract_key, |s| {
            let mut cache = ExtractionCache::open(&s.blob("extractions", "extraction_cache.jsonl"))?;
            let mut out = Extractions::default();
            for rec in &captions.records {
                let label = &holdout.get(&rec.image_id).expect("captioned holdout item").label;
                let mut ex = match cache.extract(adapters.extractor.as_ref(), &rec.image_id, &rec.caption, label) {
                    Ok(ex) => ex,
                    Err(e) => {
                        out.failures.push(format!("extraction failed for {}: {e}", rec.image_id));
                        continue;
                    }
                };
                if let (Some(b), true) = (ex.background.first(), ex.alt_background.is_empty()) {
                    match suggest_alt_background(b, adapters.alt.as_ref()) {
                        Ok(alt) => ex.alt_background = vec![alt],
                        Err(e) => out.failures.push(format!("no alternate background for {}: {e}", rec.image_id)),
                    }
                }
                out.items.insert(rec.image_id.clone(), ex);
            }
            Ok(out)
        })?;
        summary.extraction_failures = extractions.failures.len();
        warnings.extend(extractions.failures.iter().cloned());

        let edits_key = KeyHasher::new()
            .part(&extract_key)
            .part(&base_key)
            .part(adapters.editor.id())
            .part(json_hash(&cfg.adapters.editor_params))
            .finish();
        let mut records: Vec<EditRecord> = d.stage("edits", &edits_key, |s| {
            let recs = probe(&holdout, &extractions.items, &base, adapters.editor.as_ref(), &cfg.adapters.editor_params)?;
            save_edits(&s.root.join("edits"), &recs)?;
            Ok(recs)
        })?;
        attach_edits(&dir.join("edits"), &mut records).map_err(|e| Error::Stage {
            stage: "edits",
            last_good: format!("edits {edits_key}"),
            source: Box::new(e),
        })?;
        summary.probes = records.len();
        summary.flagged = records.iter().filter(|r| r.is_flagged()).count();
        summary.edit_failures = records.iter().filter(|r| r.verdict == Verdict::EditFailed).count();
        for r in records.iter().filter(|r| r.verdict == Verdict::EditFailed) {
            warnings.push(format!(
                "{} of `{}` on {} failed: {}",
                r.kind,
                r.phrase,
                r.source_id,
                r.failure.as_deref().unwrap_or("unknown")
            ));
        }

        let catalog_key = KeyHasher::new()
            .part(&edits_key)
            .part((cfg.k as u64).to_le_bytes())
            .part(&cfg.adapters.embedder)
            .finish();
        let catalog: SpuriousCatalog = d.stage("catalog", &catalog_key, |_| {
            build_catalog(data.train.classes(), &records, adapters.embedder.as_ref(), cfg.k)
        })?;
        warnings.extend(catalog.warnings.iter().cloned());
        for class in catalog.classes.keys() {
            summary.top_k.insert(
                class.clone(),
                catalog.top_k(class).map(|e| format!("{}:{}", e.kind, e.canonical_root)).collect(),
            );
        }

        let jobs_key = KeyHasher::new()
            .part(&catalog_key)
            .part((cfg.personalization_cap as u64).to_le_bytes())
            .part(cfg.seed.to_le_bytes())
            .part(adapters.personalizer.id())
            .finish();
        let jobs: Vec<PersonalizationJob> = d.stage("jobs", &jobs_key, |_| {
            Ok(plan_jobs(&catalog, adapters.personalizer.id(), cfg.personalization_cap, cfg.seed))
        })?;

        let aug_key = KeyHasher::new()
            .part(&jobs_key)
            .part(cfg.budget_mode.to_string())
            .part((cfg.multiplier as u64).to_le_bytes())
            .part(&train_hash)
            .finish();
        let aug: Augmentations = d.stage("augmentations", &aug_key, |s| {
            let budget = compute_budget(&data.train, cfg.multiplier, cfg.budget_mode)?;
            let by_id: BTreeMap<String, EditRecord> = records.iter().map(|r| (r.id.clone(), r.clone())).collect();
            let mut out = data.train.empty_like();
            out.set_name("augmentations");
            let mut counts = BTreeMap::new();
            let mut notes = Vec::new();
            for job in &jobs {
                if budget.counts.get(&job.class).copied().unwrap_or(0) == 0 {
                    notes.push(format!("class `{}` has a zero budget; no images generated", job.class));
                    continue;
                }
                let handle = personalize(job, &by_id, adapters.personalizer.as_ref())?;
                let seed = KeyHasher::new().part(cfg.seed.to_le_bytes()).part(&job.class).finish();
                let seed = u64::from_str_radix(&seed[..16], 16).expect("hex digest");
                let ds = generate_augmentations(handle.as_ref(), &budget, seed)?;
                counts.insert(job.class.clone(), ds.len());
                out = merge(&out, &ds)?;
            }
            for class in data.train.classes() {
                if !jobs.iter().any(|j| &j.class == class) {
                    notes.push(format!("class `{class}` has no personalization job; no images generated"));
                }
            }
            let rel = format!("{aug_key}/manifest.json");
            let provenance = jobs.iter().map(|j| (format!("job:{}", j.class), j.hash())).collect();
            manifest::save_with_provenance(&out, &s.blob("augmentations", &rel), provenance)?;
            Ok(Augmentations {
                manifest: rel,
                jobs: jobs.iter().map(PersonalizationJob::hash).collect(),
                counts,
                warnings: notes,
            })
        })?;
        warnings.extend(aug.warnings.iter().cloned());
        summary.augmentations = aug.counts.clone();
        let aug_ds = manifest::load(&d.store.blob("augmentations", &aug.manifest)).map_err(Error::from)?;
        let merged = merge(&data.train, &aug_ds).map_err(Error::from)?;
        (Some(base_metrics), aug_key, merged)
    } else {
        (None, "none".to_owned(), data.train.clone())
    };

    let final_key = KeyHasher::new()
        .part("final")
        .part(&train_hash)
        .part(&final_key)
        .part(retrain_cfg.hash())
        .finish();
    let clf = model_stage(&mut d, "final_model", &final_key, &final_data, &retrain_cfg)?;
    let key = KeyHasher::new().part(&final_key).part(&test_hash).finish();
    let metrics: Metrics = d.stage("metrics", &key, |_| metrics_for(&clf, &data.test))?;

    let manifest = RunManifest {
        format: MANIFEST_FORMAT,
        config_hash,
        dataset_hash: train_hash,
        test_hash,
        strategy: cfg.retrain.strategy.to_string(),
        aspire: cfg.augment,
        seed: cfg.seed,
        artifacts: d.artifacts,
        base_metrics,
        metrics,
        timings_ms: d.timings,
        summary,
        warnings,
    };
    fsutil::write_atomic(&dir.join("manifest.json"), &manifest.to_bytes())?;
    Ok(Run { manifest, dir })
}

impl Run {
    pub fn catalog(&self) -> Result<SpuriousCatalog> {
        self.load("catalog")
    }

    pub fn edit_records(&self) -> Result<Vec<EditRecord>> {
        let mut recs: Vec<EditRecord> = self.load("edits")?;
        attach_edits(&self.dir.join("edits"), &mut recs)?;
        Ok(recs)
    }

    pub fn augmentations(&self) -> Result<GroupedDataset> {
        let aug: Augmentations = self.load("augmentations")?;
        Ok(manifest::load(&self.dir.join("augmentations").join(aug.manifest))?)
    }

    pub fn final_model(&self) -> Result<TrainedClassifier> {
        self.model("final_model")
    }

    pub fn base_model(&self) -> Result<TrainedClassifier> {
        self.model("base_model")
    }

    fn model(&self, stage: &str) -> Result<TrainedClassifier> {
        let key = self.key(stage)?;
        Ok(TrainedClassifier::load(&self.dir.join(stage).join(format!("{key}.ckpt")))?)
    }

    fn key(&self, stage: &str) -> Result<&String> {
        self.manifest
            .artifacts
            .get(stage)
            .ok_or_else(|| Error::Config(format!("run has no `{stage}` stage")))
    }

    fn load<T: DeserializeOwned>(&self, stage: &str) -> Result<T> {
        let key = self.key(stage)?;
        let e: Envelope<T> = fsutil::read_json(&self.dir.join(stage).join(format!("{key}.json")))?;
        Ok(e.value)
    }
}
