//! The `aew` command line: configuration, experiment orchestration and CSV
//! output.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::commands::FigureId;
use crate::config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Usage(#[from] clap::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
            CliError::Usage(e) => e.exit_code(),
        }
    }
}

impl From<aew_core::AewError> for CliError {
    fn from(e: aew_core::AewError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "aew", version, about = "Weak approximation of SDE expectations with asymptotic-expansion weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Price the configured (order, step count, strike) matrix.
    Price(RunArgs),
    /// Emit the data behind one of the published error figures.
    Figure {
        #[arg(long, ignore_case = true)]
        id: FigureId,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Benchmark prices for the configured strikes.
    Bench(RunArgs),
    /// Squared-error objective over the γ search grid.
    SweepGamma(RunArgs),
    /// Chain errors against the benchmark and fitted convergence orders.
    Convergence(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `mc.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Record wall-clock time per row. Off by default so reruns are
    /// byte-identical.
    #[arg(long)]
    pub timings: bool,
}

impl RunArgs {
    fn load(&self) -> Result<Config, CliError> {
        let mut cfg = Config::from_path(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.mc.seed = seed;
        }
        info!("master seed {}", cfg.mc.seed);
        info!("resolved configuration:\n{}", cfg.to_toml());
        Ok(cfg)
    }
}

fn write_csv<T: Serialize>(path: &Path, header: Option<&str>, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(header.is_none()).from_path(path)?;
    if let Some(h) = header {
        w.write_record(h.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Caps the global worker pool at `AEW_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("AEW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("AEW_THREADS: expected a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Price(a) => {
            let rows = commands::price(&a.load()?, a.timings)?;
            write_csv(&a.out, Some(commands::PRICE_HEADER), &rows)
        }
        Command::Bench(a) => {
            let rows = commands::bench(&a.load()?, a.timings)?;
            write_csv(&a.out, Some(commands::PRICE_HEADER), &rows)
        }
        Command::Figure { id, run } => {
            let rows = commands::figure(&run.load()?, id)?;
            write_csv(&run.out, Some(commands::FIGURE_HEADER), &rows)
        }
        Command::SweepGamma(a) => write_csv(&a.out, None, &commands::sweep_gamma(&a.load()?)?),
        Command::Convergence(a) => write_csv(&a.out, None, &commands::convergence(&a.load()?)?),
    }
}
