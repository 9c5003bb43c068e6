//! `mejem`: train and evaluate margin-enhanced joint energy models for
//! out-of-distribution detection.
//!
//! All behavior is driven by a TOML config file (`init-config` writes one
//! with every default filled in). Results land in the config's output
//! directory; setting `MEJEM_OUTPUT_ROOT` re-roots relative output
//! directories without editing configs.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 numerical divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mejem_core::config::ExperimentConfig;
use mejem_core::error::{Error, Result};
use mejem_core::runner;

const OUTPUT_ROOT_VAR: &str = "MEJEM_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "mejem",
    version,
    about = "Margin-enhanced joint energy models for OOD detection",
    after_help = "Environment:\n  MEJEM_OUTPUT_ROOT  prefix for relative output directories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a config file with every default filled in.
    InitConfig {
        /// Destination file.
        #[arg(default_value = "mejem.toml")]
        path: PathBuf,
        /// Overwrite if the file exists.
        #[arg(long)]
        force: bool,
    },
    /// Write the synthetic benchmark splits as CSV files.
    GenData {
        /// Experiment config.
        config: PathBuf,
    },
    /// Train a model; writes a checkpoint and the training log.
    Train {
        /// Experiment config.
        config: PathBuf,
        /// Continue from a checkpoint of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the test data against a checkpoint; writes score CSVs,
    /// metrics JSON, and histograms.
    Evaluate {
        /// Experiment config.
        config: PathBuf,
        /// Checkpoint to evaluate; defaults to checkpoint.json in the
        /// output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the component ablation grid (generative ×
    /// margin with SAM, plus a SAM-off baseline).
    Ablate {
        /// Base experiment config.
        config: PathBuf,
    },
    /// Print the metrics of a finished run or ablation directory.
    Report {
        /// Run directory holding metrics.json or ablation.json.
        dir: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::InitConfig { path, force } => {
            if path.exists() && !force {
                return Err(Error::Config(format!(
                    "{} exists; pass --force to overwrite",
                    path.display()
                )));
            }
            ExperimentConfig::default().save(&path)?;
            println!("wrote {}", path.display());
        }
        Command::GenData { config } => {
            let config = load_config(&config)?;
            let written = runner::generate_data_files(&config)?;
            for path in &written {
                println!("wrote {}", path.display());
            }
        }
        Command::Train { config, resume } => {
            let config = load_config(&config)?;
            let outcome = runner::train(&config, resume.as_deref())?;
            println!(
                "trained {} for {} steps in {:.1}s",
                runner::model_name(&config.flags),
                outcome.steps,
                outcome.wall_clock_secs
            );
            println!("checkpoint: {}", outcome.checkpoint_path.display());
        }
        Command::Evaluate { config, checkpoint } => {
            let config = load_config(&config)?;
            runner::evaluate(&config, checkpoint.as_deref())?;
            print!("{}", runner::render_report(Path::new(&config.output_dir))?);
        }
        Command::Ablate { config } => {
            let config = load_config(&config)?;
            runner::ablate(&config)?;
            print!("{}", runner::render_report(Path::new(&config.output_dir))?);
        }
        Command::Report { dir } => {
            print!("{}", runner::render_report(&dir)?);
        }
    }
    Ok(())
}

/// Loads a config and applies the output-root override: a relative
/// `output_dir` is joined under `MEJEM_OUTPUT_ROOT` when the variable is
/// set.
fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Ok(root) = std::env::var(OUTPUT_ROOT_VAR) {
        if !root.is_empty() && Path::new(&config.output_dir).is_relative() {
            config.output_dir = Path::new(&root)
                .join(&config.output_dir)
                .to_string_lossy()
                .into_owned();
        }
    }
    Ok(config)
}
