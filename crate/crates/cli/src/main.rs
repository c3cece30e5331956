//! `pia`: policy improvement runs, the linear baseline and the Monte Carlo
//! cross-check from a JSON configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<pia_core::Error> for CliError {
    fn from(e: pia_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Parser)]
#[command(name = "pia", version, about = "Policy improvement for a controlled diffusion on a rectangle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`, default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep scheme of the inner solver (overrides the config).
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run policy improvement and the convergence analysis.
    Solve(Common),
    /// Solve the zero-policy linear problem and report its cost.
    Baseline(Common),
    /// Compare finite-difference values with Monte Carlo estimates.
    Validate(Common),
}

fn prepare(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(scheme) = common.scheme {
        cfg.scheme = match scheme {
            SchemeArg::GaussSeidel => "gauss_seidel",
            SchemeArg::Jacobi => "jacobi",
        }
        .into();
    }
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|source| CliError::Output {
        path: out.clone(),
        source,
    })?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve(common) => {
            let (cfg, out) = prepare(&common)?;
            commands::solve(&cfg, &out)
        }
        Command::Baseline(common) => {
            let (cfg, out) = prepare(&common)?;
            commands::baseline(&cfg, &out)
        }
        Command::Validate(common) => {
            let (cfg, out) = prepare(&common)?;
            commands::validate(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
