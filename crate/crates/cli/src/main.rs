//! `ropegeom`: schedule inspection, RoPE application, synthetic and
//! theoretical checks, and dump analysis.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or validation, 3 assertion failure.

mod args;
mod commands;
mod error;
mod output;

use std::process::ExitCode;

use clap::Parser;
use sha2::{Digest, Sha256};

use args::{Cli, Command};
use error::{CliError, CliResult};
use output::OutputDir;

/// Independent RNG stream per analysis cell, stable across thread counts.
pub fn cell_seed(seed: u64, layer: u32, head: u32, length: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"ropegeom-cell");
    h.update(seed.to_le_bytes());
    h.update(layer.to_le_bytes());
    h.update(head.to_le_bytes());
    h.update(length.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn run(cli: Cli) -> CliResult<String> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("thread pool: {e}")))?;
    }
    let out = OutputDir {
        dir: cli.out_dir.clone(),
        force: cli.force,
    };
    match &cli.command {
        Command::Frequencies(a) => commands::frequencies::run(a, cli.seed),
        Command::Synth(a) => commands::synth::run(a, cli.seed, &out),
        Command::Theory(a) => commands::theory::run(a, cli.seed, &out),
        Command::Analyze(a) => commands::analyze::run(a, cli.seed, &out),
        Command::Rope(a) => commands::rope::run(a, cli.force),
        Command::Selftest(a) => commands::selftest::run(a, cli.seed, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ropegeom: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
