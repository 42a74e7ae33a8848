use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use synthbench::{make_benchmark, write_benchmark, BenchConfig};

#[derive(Parser)]
#[command(name = "synthbench", about = "Synthetic spurious-correlation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/test manifests plus ground_truth.json.
    Make {
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 0.95)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        size: u32,
        #[arg(long, default_value_t = 25)]
        test_per_group: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Make {
            classes,
            per_class,
            rho,
            seed,
            size,
            test_per_group,
            out,
        } => {
            let cfg = BenchConfig {
                n_classes: classes,
                per_class_train: per_class,
                spurious_rate: rho,
                image_size: (size, size),
                test_per_group,
                seed,
            };
            let bench = make_benchmark(&cfg)?;
            write_benchmark(&bench, &out).with_context(|| format!("writing benchmark to {}", out.display()))?;
            println!(
                "wrote {} train and {} test images to {}",
                bench.train.len(),
                bench.test.len(),
                out.display()
            );
        }
    }
    Ok(())
}
