//! `poswitch` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

mod checks;
mod commands;
mod manifest;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Optimal switching under a hidden Markov chain observed through arrivals.
#[derive(Debug, Parser)]
#[command(name = "poswitch", version, about)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "POSWITCH_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve for the value function and extract the switching regions.
    Solve(commands::SolveArgs),
    /// Monte Carlo evaluation of a strategy, or replay of an arrival record.
    Simulate(commands::SimulateArgs),
    /// Run the invariant checks at reduced scale.
    Check(commands::CheckArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
struct RerunArgs {
    /// manifest.json written by an earlier run.
    manifest: PathBuf,
    /// Output directory (defaults to the recorded one).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Compare the new outputs with the recorded hashes.
    #[arg(long)]
    verify: bool,
}

/// Failure with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: e.into() }
    }
    pub fn solver(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: e.into() }
    }
    pub fn artifact(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 4, error: e.into() }
    }
    pub fn check(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 5, error: e.into() }
    }
    pub fn io(e: impl Into<anyhow::Error>) -> Self {
        Self { code: 1, error: e.into() }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Solve(a) => commands::solve(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Check(a) => commands::check(&a),
        Command::Rerun(a) => commands::rerun(&a.manifest, a.out.as_deref(), a.verify),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
