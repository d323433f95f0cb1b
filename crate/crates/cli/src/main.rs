//! Experiment runner CLI.
//!
//! Exit codes: 0 success, 1 config validation failure, 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use feddpp::config::ExperimentConfig;
use feddpp::error::ExperimentError;
use feddpp::experiment;

#[derive(Parser)]
#[command(
    name = "feddpp",
    about = "Federated learning round simulator with diversity-aware client selection",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run all trials of an experiment and write CSVs plus summary.json.
    Run {
        /// Path to the experiment TOML.
        config: PathBuf,
    },
    /// Check a config and report every violation.
    Validate {
        config: PathBuf,
    },
    /// Print the exact k-DPP pmf over client subsets (debug; C <= 15).
    Pmf {
        config: PathBuf,
    },
    /// Emit client profiles, the similarity matrix, and the wire blob.
    Profile {
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                ExperimentError::Invalid(_) | ExperimentError::Parse { .. } => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let bundle = experiment::run_experiment(&cfg)?;
            let s = &bundle.summary;
            println!(
                "{} | {} clients, {} per round, {} rounds x {} trials",
                s.strategy, s.clients, s.participants, s.rounds, s.trials
            );
            if let Some(last) = s.accuracy_mean.last() {
                println!("final mean accuracy: {last:.4}");
            }
            for (threshold, round) in &s.rounds_to_accuracy {
                match round {
                    Some(r) => println!("mean accuracy reaches {threshold} at round {r}"),
                    None => println!("mean accuracy never reaches {threshold}"),
                }
            }
            println!("outputs in {}", cfg.output_dir.display());
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validated()?;
            println!("{} is valid", config.display());
            Ok(())
        }
        Command::Pmf { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = experiment::pmf_report(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Profile { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = experiment::profile_report(&cfg)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            experiment::emit_profile_report(&report, &dir)?;
            println!(
                "wrote profiles.json, profiles.bin, similarity.json for {} clients to {}",
                report.profiles.len(),
                dir.display()
            );
            Ok(())
        }
    }
}
