//! `ricker`: analysis, simulation and QSD experiments for the stochastic
//! Ricker competition model, driven by a TOML config file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CliError, Report};
use config::RunConfig;
use output::{Output, Provenance};

#[derive(Parser)]
#[command(name = "ricker", version, about = "Stochastic Ricker competition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed points, invasibility, stability and an invariant box.
    Analyze(Common),
    /// Independent trajectories of the branching process.
    Simulate(Common),
    /// Quasi-stationary distribution and its eigenvalue.
    Qsd(Common),
    /// QSD summaries across a list of K values.
    Sweep(Common),
    /// QSD mass near an attracting cycle of the deterministic map.
    Cycles(Common),
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

fn run(cli: Cli) -> Result<Report, CliError> {
    let (Command::Analyze(common)
    | Command::Simulate(common)
    | Command::Qsd(common)
    | Command::Sweep(common)
    | Command::Cycles(common)) = &cli.command;
    let bytes = fs::read(&common.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config("config file is not valid UTF-8".into()))?;
    let cfg = RunConfig::parse(&text)?;
    let seed = common.seed.or(cfg.seed).unwrap_or(0);
    let out = Output::new(&common.out_dir, Provenance::new(&bytes, seed))?;
    match cli.command {
        Command::Analyze(_) => commands::analyze(&cfg, &out),
        Command::Simulate(_) => commands::simulate(&cfg, &out, seed),
        Command::Qsd(_) => commands::qsd(&cfg, &out, seed),
        Command::Sweep(_) => commands::sweep(&cfg, &out, seed),
        Command::Cycles(_) => commands::cycles(&cfg, &out, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            for n in &report.notices {
                eprintln!("{n}");
            }
            print!("{}", report.stdout);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
