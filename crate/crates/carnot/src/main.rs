//! Command-line front end: validate, describe, and run experiment configs.
//!
//! Exit codes: 0 on success (all checks passed), 1 when an experiment ran but
//! at least one check failed, 2 on configuration or runtime errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use carnot::config;
use carnot::experiment;

#[derive(Parser)]
#[command(
    name = "carnot",
    about = "Experiment runner for degenerate operators on stratified groups",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and resolve a config; report problems without running anything.
    Validate {
        /// Path to the TOML config.
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the fully resolved config as JSON.
    Describe {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured experiment and write the report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory override.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Suppress per-check console output.
        #[arg(long, default_value_t = false)]
        quiet: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match config::load_and_resolve(&config, None, None) {
            Ok(resolved) => {
                println!(
                    "ok: {} experiment on {} ({}d, step {}) with {}",
                    resolved.kind,
                    resolved.group.name,
                    resolved.group.dim,
                    resolved.group.step,
                    resolved.op.name
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Describe { config } => match config::load_and_resolve(&config, None, None) {
            Ok(resolved) => {
                let json = serde_json::to_string_pretty(&resolved.summary())
                    .expect("summary serializes");
                println!("{json}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run { config, out, seed, quiet } => {
            let resolved = match config::load_and_resolve(&config, seed, out) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match experiment::run(&resolved, quiet) {
                Ok(outcome) if outcome.passed => ExitCode::SUCCESS,
                Ok(_) => ExitCode::from(1),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
