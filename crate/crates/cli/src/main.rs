//! `twoscale`: run simulation, filtering, criteria and turbulence experiments from a TOML file.
//!
//! Exit status is 0 on success, 1 on any error and 2 when a checked criterion fails.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use twoscale_kf::Execution;

use commands::Run;

#[derive(Parser)]
#[command(name = "twoscale", version, about = "Two-scale reduced Kalman filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory of the configured system.
    Simulate(Common),
    /// Run the configured filter along one simulated trajectory.
    Filter(Common),
    /// Monte Carlo check of the filter's covariance and error criteria.
    Criteria(Common),
    /// Cutoff and small-scale prior tables for the turbulence model.
    Turbulence(Common),
    /// Time the filters over a grid of dimensions.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Write a gnuplot script next to the benchmark CSV.
    #[arg(long)]
    plot: bool,
    /// Run Monte Carlo trials on one thread.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn into_run(self) -> Result<Run> {
        let mut cfg = config::load(self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        cfg.validate()?;
        let out = self
            .out
            .or_else(|| cfg.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out)
            .with_context(|| format!("creating output directory {}", out.display()))?;
        let exec = if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        };
        Ok(Run {
            cfg,
            out,
            exec,
            plot: self.plot,
        })
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    let (name, common, f): (&str, Common, fn(&Run) -> Result<bool>) = match cli.command {
        Command::Simulate(c) => ("simulate", c, commands::simulate_cmd),
        Command::Filter(c) => ("filter", c, commands::filter_cmd),
        Command::Criteria(c) => ("criteria", c, commands::criteria_cmd),
        Command::Turbulence(c) => ("turbulence", c, commands::turbulence_cmd),
        Command::Bench(c) => ("bench", c, commands::bench_cmd),
    };
    let run = common.into_run()?;
    let ok = f(&run)?;
    commands::write_meta(&run, name)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
