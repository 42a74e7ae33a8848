use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use aspire::generate::{compute_budget, generate_augmentations, personalize, plan_jobs, DEFAULT_PERSONALIZATION_CAP};
use aspire::pipeline::{attach_edits, save_edits};
use aspire::synth::{SynthAdapters, ADAPTER_ID};
use aspire::{BudgetMode, EditRecord, Report, RunConfig, RunManifest, SpuriousCatalog};
use aspire_classifier::{train, Strategy, TrainConfig};
use aspire_core::{evaluate, evaluate_ungrouped, fsutil, manifest, merge};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aspire", about = "Find spurious features by editing images, then augment and retrain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Copy the manifest, catalog and edits here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip augmentation: train the retrain config on the original data.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare finished runs (manifest files or directories holding one).
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Train one classifier on a benchmark directory.
    Train {
        #[arg(long)]
        strategy: Strategy,
        /// Training config JSON; desk-scale defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate augmentations from a catalog written by `run --out`.
    Generate {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value = "minority_match")]
        budget_mode: BudgetMode,
        #[arg(long, default_value_t = 1)]
        multiplier: usize,
        /// Benchmark directory the catalog was built from.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_PERSONALIZATION_CAP)]
        cap: usize,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "aspire=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| {
                c.downcast_ref::<aspire::Error>().is_some_and(aspire::Error::is_config)
                    || matches!(
                        c.downcast_ref::<aspire_classifier::Error>(),
                        Some(aspire_classifier::Error::InvalidConfig(_))
                    )
            });
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run {
            config,
            out,
            baseline,
            seed,
        } => run(&config, out.as_deref(), baseline, seed),
        Command::Report { runs, json } => report(&runs, json),
        Command::Train {
            strategy,
            config,
            data,
            out,
        } => train_cmd(strategy, config.as_deref(), &data, &out),
        Command::Generate {
            catalog,
            budget_mode,
            multiplier,
            data,
            out,
            seed,
            cap,
        } => generate(&catalog, budget_mode, multiplier, &data, &out, seed, cap),
    }
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut cfg: RunConfig =
        serde_json::from_str(&raw).map_err(|e| aspire::Error::Config(format!("{}: {e}", path.display())))?;
    // Relative paths are relative to the config file.
    let base = path.parent().unwrap_or(Path::new("."));
    if cfg.data_dir.is_relative() {
        cfg.data_dir = base.join(&cfg.data_dir);
    }
    if let Some(c) = cfg.cache_dir.as_mut().filter(|c| c.is_relative()) {
        *c = base.join(&*c);
    }
    Ok(cfg)
}

fn run(config: &Path, out: Option<&Path>, baseline: bool, seed: Option<u64>) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if baseline {
        cfg.augment = false;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let run = aspire::run(&cfg)?;
    let m = &run.manifest;
    if let Some(out) = out {
        fsutil::write_atomic(&out.join("manifest.json"), &m.to_bytes())?;
        if m.aspire {
            fsutil::write_json(&out.join("spurious_catalog.json"), &run.catalog()?)?;
            let records = run.edit_records()?;
            fsutil::write_json(&out.join("edit_records.json"), &records)?;
            save_edits(&out.join("edits"), &records)?;
        }
    }
    for w in &m.warnings {
        tracing::warn!("{w}");
    }
    for (class, groups) in &m.summary.top_k {
        println!("{class}: {}", groups.join(", "));
    }
    println!(
        "{} run {}: average {:.1}, worst group {:.1}",
        m.strategy,
        &m.config_hash[..12],
        m.metrics.average_accuracy * 100.0,
        m.metrics.worst_group_accuracy * 100.0
    );
    println!("cache: {}", run.dir.display());
    Ok(())
}

fn report(runs: &[PathBuf], json: bool) -> anyhow::Result<()> {
    let mut manifests = Vec::new();
    for p in runs {
        let path = if p.is_dir() { p.join("manifest.json") } else { p.clone() };
        let m = RunManifest::load(&path).with_context(|| format!("loading {}", path.display()))?;
        manifests.push((p.display().to_string(), m));
    }
    let report = Report::build(&manifests)?;
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn train_cmd(strategy: Strategy, config: Option<&Path>, data: &Path, out: &Path) -> anyhow::Result<()> {
    let cfg = match config {
        Some(p) => {
            let raw = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<TrainConfig>(&raw)
                .map_err(|e| aspire::Error::Config(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::desk(),
    }
    .with_strategy(strategy);
    let train_ds = manifest::load(&data.join(synthbench::TRAIN_MANIFEST))?;
    let clf = train(&train_ds, &cfg)?;
    clf.save(&out.join("model.ckpt"))?;
    let test_path = data.join(synthbench::TEST_MANIFEST);
    if test_path.exists() {
        let test = manifest::load(&test_path)?;
        let preds = clf.predict_labels(test.iter())?;
        let metrics = if test.is_grouped() {
            evaluate(&preds, &test)?
        } else {
            evaluate_ungrouped(&preds, &test)?
        };
        fsutil::write_json(&out.join("metrics.json"), &metrics)?;
        println!(
            "{strategy}: average {:.1}, worst group {:.1}",
            metrics.average_accuracy * 100.0,
            metrics.worst_group_accuracy * 100.0
        );
    }
    Ok(())
}

fn generate(
    catalog_path: &Path,
    mode: BudgetMode,
    multiplier: usize,
    data: &Path,
    out: &Path,
    seed: u64,
    cap: usize,
) -> anyhow::Result<()> {
    let catalog: SpuriousCatalog = fsutil::read_json(catalog_path)?;
    let dir = catalog_path.parent().unwrap_or(Path::new("."));
    let mut records: Vec<EditRecord> = fsutil::read_json(&dir.join("edit_records.json"))?;
    attach_edits(&dir.join("edits"), &mut records)?;
    let by_id: BTreeMap<String, EditRecord> = records.into_iter().map(|r| (r.id.clone(), r)).collect();

    let train_ds = manifest::load(&data.join(synthbench::TRAIN_MANIFEST))?;
    let index: synthbench::SceneIndex = fsutil::read_json(&data.join(synthbench::SCENES))?;
    let synth = SynthAdapters::new(synthbench::Oracle::new(&index));
    let personalizer = synth.personalizer();

    let budget = compute_budget(&train_ds, multiplier, mode)?;
    let mut all = train_ds.empty_like();
    all.set_name("augmentations");
    for job in plan_jobs(&catalog, ADAPTER_ID, cap, seed) {
        let handle = personalize(&job, &by_id, &personalizer)?;
        let ds = generate_augmentations(handle.as_ref(), &budget, seed)?;
        println!("{}: {} images", job.class, ds.len());
        all = merge(&all, &ds)?;
    }
    manifest::save(&all, &out.join("manifest.json"))?;
    println!("wrote {} images to {}", all.len(), out.display());
    Ok(())
}
