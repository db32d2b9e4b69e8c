use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pli_core::harness::experiments::sweep_csv;
use pli_core::harness::{
    ab_test, drift_scenario, hyperparameter_sweep, load_model, run_simulation, SimConfig, SweepGrid,
};
use pli_core::trainer::{prepare_local, read_snapshots_csv, standardize, FeatureMatrix, FeatureSet};

#[derive(Parser)]
#[command(name = "pli-sim", version, about = "Federated learner-performance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full federated simulation and write metrics and the final model.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation per point of a hyperparameter grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Shift learner behaviour at a given week and track recovery.
    Drift {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        drift_week: u32,
        #[arg(long)]
        factor: f64,
    },
    /// Compare two saved models on a labelled (or clustered) CSV dataset.
    Abtest {
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let mut cfg = SimConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let outcome = run_simulation(&cfg)?;
            outcome.write_to(&cfg.output_dir)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary())?);
            println!("outputs written to {}", cfg.output_dir.display());
        }
        Command::Sweep { config, grid } => {
            let cfg = SimConfig::load(&config)?;
            let text = std::fs::read_to_string(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let grid = SweepGrid::from_toml_str(&text)?;
            let results = hyperparameter_sweep(&grid, &cfg)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let csv = sweep_csv(&results);
            std::fs::write(cfg.output_dir.join("sweep.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Drift {
            config,
            drift_week,
            factor,
        } => {
            let cfg = SimConfig::load(&config)?;
            let (outcome, report) = drift_scenario(&cfg, drift_week, factor)?;
            outcome.write_to(&cfg.output_dir)?;
            write_json(&cfg.output_dir.join("drift_report.json"), &report)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Abtest { model_a, model_b, data } => {
            let (a, meta_a) = load_model(&model_a)?;
            let (b, meta_b) = load_model(&model_b)?;
            if meta_a.feature_names != meta_b.feature_names {
                bail!(
                    "models use different features: {:?} vs {:?}",
                    meta_a.feature_names,
                    meta_b.feature_names
                );
            }
            let features = if meta_a.feature_names == FeatureSet::Raw.names() {
                FeatureSet::Raw
            } else if meta_a.feature_names == FeatureSet::Measures.names() {
                FeatureSet::Measures
            } else {
                bail!("unrecognized feature names {:?}", meta_a.feature_names);
            };
            let file = File::open(&data).with_context(|| format!("opening {}", data.display()))?;
            let dataset = read_snapshots_csv(file, meta_a.granularity)?;
            let (matrix, labels) = match dataset.labels {
                Some(labels) => (
                    standardize(&FeatureMatrix::from_snapshots(&dataset.snapshots, features)?)?,
                    labels,
                ),
                None => {
                    log::info!("no label column; deriving labels by clustering");
                    let prepared = prepare_local(&dataset.snapshots, features, 0)?;
                    (prepared.matrix, prepared.labels)
                }
            };
            let report = ab_test(&a, &b, &matrix, &labels)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
