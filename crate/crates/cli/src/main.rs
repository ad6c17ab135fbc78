//! `qsmfg`: run, validate and sweep quasi-stationary MFG solves from JSON
//! configurations.
//!
//! Exit codes: 0 success, 2 configuration error, 3 non-convergence, 1 any
//! other failure.

mod config;
mod run;
mod sweep;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "qsmfg", version, about = "Quasi-stationary mean field games of controls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configuration and write its artifacts.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Spot-check the configured model without solving.
    Validate { config: PathBuf },
    /// Run the Cartesian product of a sweep file.
    Sweep { config: PathBuf },
}

enum Status {
    Done,
    NotConverged,
}

fn read(path: &PathBuf) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn dispatch(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = RunConfig::from_json(&read(&config)?)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let summary = run::execute(&cfg, &out)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(if summary.converged { Status::Done } else { Status::NotConverged })
        }
        Command::Validate { config } => {
            let cfg = RunConfig::from_json(&read(&config)?)?;
            let report = run::validate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(Status::Done)
        }
        Command::Sweep { config } => {
            let sweep: sweep::SweepConfig =
                serde_json::from_str(&read(&config)?).map_err(|e| ConfigError::new("sweep", e.to_string()))?;
            let summaries = sweep::run_sweep(&sweep)?;
            println!("{} points written to {}", summaries.len(), sweep.output_dir.display());
            Ok(if summaries.iter().all(|s| s.converged) { Status::Done } else { Status::NotConverged })
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(Status::Done) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("solver did not converge; artifacts were written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
