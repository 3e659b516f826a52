//! `rough-llg`: config-driven experiment runner.

mod config;
mod output;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use config::{Experiment, RunConfig};
use output::Artifacts;

/// Runs one experiment from a TOML config and writes CSV/JSON artifacts.
///
/// Exit status: 0 if every check passes, 1 if a check fails, 2 on a configuration
/// or numerical error. Set ROUGH_LLG_THREADS to bound the worker pool.
#[derive(Debug, Parser)]
#[command(name = "rough-llg", version)]
struct Cli {
    experiment: Experiment,
    #[arg(long)]
    config: PathBuf,
    /// overrides `seed` from the config
    #[arg(long)]
    seed: Option<u64>,
    /// overrides `out` from the config; defaults to `rough-llg-out/<experiment>`
    #[arg(long)]
    out: Option<PathBuf>,
}

fn threads() -> Result<usize> {
    match std::env::var("ROUGH_LLG_THREADS") {
        Ok(v) => {
            let n: usize = v.parse().with_context(|| format!("ROUGH_LLG_THREADS: not a thread count: {v:?}"))?;
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
            Ok(rayon::current_num_threads())
        }
        Err(_) => Ok(rayon::current_num_threads()),
    }
}

fn main_inner(cli: Cli) -> Result<bool> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = Some(out);
    }
    let setup = cfg.validate(cli.experiment)?;
    let threads = threads()?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("rough-llg-out").join(cli.experiment.name()));
    let mut out = Artifacts::create(&dir)?;
    let summary = run::run(cli.experiment, &cfg, &setup, &mut out)?;
    out.finish(&cfg, cli.experiment.name(), cfg.seed, threads)?;
    summary.print();
    println!("artifacts: {}", dir.display());
    Ok(summary.all_pass)
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
