//! `ergoflow` — experiment runner for continuous-time polynomial ergodic
//! averages: evaluates theorem-form averaging plans over point ensembles,
//! writes curves (CSV), reports (JSON) and a run manifest, and compares
//! engine output against registered exact oracles.

mod config;
mod fixtures;
mod runner;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ergoflow", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every plan of a config across its point ensemble.
    Run {
        /// Path to a TOML config, or the name of a bundled fixture.
        config: String,
        /// Worker threads for plan execution.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory (default: runs/<config name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the engine against the oracle registered in a config.
    OracleCompare {
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the bundled fixture configs.
    ListFixtures,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run {
            config,
            threads,
            out,
        } => {
            let (text, origin) = match runner::resolve_config(&config) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    return ExitCode::from(runner::EXIT_CONFIG_ERROR as u8);
                }
            };
            let out_dir = out.unwrap_or_else(|| default_out_dir(&origin));
            match runner::run(&text, &out_dir, threads) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    runner::EXIT_CONFIG_ERROR
                }
            }
        }
        Cmd::OracleCompare { config, out } => {
            let (text, origin) = match runner::resolve_config(&config) {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    return ExitCode::from(runner::EXIT_CONFIG_ERROR as u8);
                }
            };
            let out_dir = out.unwrap_or_else(|| default_out_dir(&origin));
            match runner::oracle_compare(&text, &out_dir) {
                Ok(code) => code,
                Err(e) => {
                    eprintln!("config error: {e:#}");
                    runner::EXIT_CONFIG_ERROR
                }
            }
        }
        Cmd::ListFixtures => {
            for name in fixtures::names() {
                println!("{name}");
            }
            runner::EXIT_OK
        }
    };
    ExitCode::from(code as u8)
}

fn default_out_dir(origin: &std::path::Path) -> PathBuf {
    let stem = origin
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "run".into())
        .replace("fixture:", "");
    PathBuf::from("runs").join(stem)
}
