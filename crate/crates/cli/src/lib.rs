//! Batch front-end for the `wentzell-core` experiments.
//!
//! A run reads one JSON config, validates it completely, executes the task
//! and writes CSV/JSON artifacts plus a `manifest.json` into the output
//! directory. Every artifact records the SHA-256 of the config.

pub mod config;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ConfigError, ExperimentConfig};
pub use run::{resolve_out_dir, run, Manifest, RunError};

pub const OUT_DIR_ENV: &str = "WENTZELL_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "wentzell", version, about = "Heat equation with dynamic boundary conditions: batch experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment config.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for sweeps.
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Parses `args` and runs; returns the process exit code. Errors go to
/// stderr as one JSON line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let Command::Run { config, out, threads } = cli.command;

    if let Some(n) = threads {
        if n == 0 {
            eprintln!("{}", ConfigError::new("--threads", "must be at least 1").to_json_line());
            return 2;
        }
        // a second call in the same process keeps the first pool, which is
        // harmless: results do not depend on the thread count
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }

    let text = match std::fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{}", ConfigError::new("<file>", format!("{}: {e}", config.display())).to_json_line());
            return 2;
        }
    };
    let cfg = match ExperimentConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            return 2;
        }
    };
    let dir = resolve_out_dir(out, &cfg, std::env::var_os(OUT_DIR_ENV).map(PathBuf::from));
    match run(&cfg, &dir) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
