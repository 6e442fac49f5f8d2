use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use safari_core::runner;
use safari_core::{AggregationMode, ExperimentConfig};

#[derive(Parser)]
#[command(name = "safari", version, about = "Sparse federated learning over lossy links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics, surrogate logs and analysis.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated aggregation modes, e.g. `safari,drop,fedavg`.
        #[arg(long, value_delimiter = ',')]
        modes: Option<Vec<AggregationMode>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check a config and list every invalid field.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run safari aggregation and dump only the final similarity matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    if let Some(seed) = seed {
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, modes, out, seed } => {
            let mut cfg = load(&config, seed)?;
            if let Some(modes) = modes {
                cfg.experiment.modes = modes;
            }
            let Some(dir) = out.or_else(|| cfg.experiment.output_dir.clone()) else {
                bail!("no output directory: pass --out or set experiment.output_dir");
            };
            let output = runner::run(&cfg)?;
            runner::write_outputs(&output, &dir)?;
            for mode in &output.modes {
                let last = mode.records.iter().rev().find_map(|r| r.eval);
                match last {
                    Some(e) => println!(
                        "{:<7} rounds={} eval_loss={:.4} eval_acc={:.4}",
                        mode.mode.name(),
                        mode.records.len(),
                        e.loss,
                        e.top1
                    ),
                    None => println!("{:<7} rounds=0", mode.mode.name()),
                }
            }
            println!("wrote {}", dir.display());
        }
        Command::Validate { config } => {
            let cfg = load(&config, None)?;
            cfg.validate()?;
            println!("ok");
        }
        Command::Matrix { config, out, seed } => {
            let mut cfg = load(&config, seed)?;
            cfg.experiment.modes = vec![AggregationMode::Safari];
            let output = runner::run(&cfg)?;
            std::fs::create_dir_all(&out)?;
            let path = out.join("similarity_final.csv");
            output
                .final_similarity()
                .expect("one mode ran")
                .write_csv(&path)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
