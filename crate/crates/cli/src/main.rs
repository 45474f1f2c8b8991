//! `entangle`: runs preference-optimization experiments from JSON configs.
//!
//! Exit codes: 0 success, 1 a theorem check failed, 2 bad config, 3 numeric
//! failure during the run, 4 I/O error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use entangle_core::experiment::{run, ExperimentConfig};
use entangle_core::loss::list_catalog;
use entangle_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "entangle",
    version,
    about = "Gradient entanglement experiments on toy language models"
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts [default: the config's `out`, else `out`].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress the summary on stdout.
    #[arg(long)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lists the loss catalog with default hyperparameters.
    Catalog,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(Command::Catalog) = cli.command {
        let _ = write!(std::io::stdout(), "{}", list_catalog());
        return ExitCode::SUCCESS;
    }
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let result = ExperimentConfig::from_path(path).and_then(|mut config| {
        if let Some(seed) = cli.seed {
            config.seed = seed;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        run(&config, &out).map(|summary| (summary, out))
    });
    match result {
        Ok((summary, out)) => {
            if !cli.quiet {
                for line in &summary.lines {
                    println!("{line}");
                }
                println!("wrote {} artifacts to {}", summary.artifacts.len() + 1, out.display());
            }
            if summary.pass == Some(false) {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(err) => {
            let code = match &err {
                // A config file that cannot be read is a configuration problem.
                Error::Io(_) if !path.is_file() => 2,
                other => other.exit_code(),
            };
            eprintln!("error: {err}");
            ExitCode::from(code as u8)
        }
    }
}
