//! `confopt`: train and evaluate classifiers that optimize general
//! confusion-matrix metrics under confusion-matrix constraints.

mod config;
mod runner;

use clap::{Parser, Subcommand};
use config::{ExperimentConfig, OracleConfig};
use runner::RunError;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "confopt",
    about = "Confusion-matrix metric optimization via plug-in linear minimization oracles"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment: train the probability model, run the solver over
    /// seeded trials, and write traces plus a summary.
    Run {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for summary.json, trace_<i>.csv and
        /// classifier_<i>.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run even when the metric's smoothness class does not match the
        /// solver's assumptions.
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Compute a brute-force reference optimum on a synthetic distribution
    /// and store it as a fixture.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        /// Fixture output path (JSON).
        #[arg(long, default_value = "oracle_fixture.json")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-evaluate a saved classifier on the configured data source.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Path to a classifier_<i>.json produced by `run`.
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse and validate a configuration file.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, RunError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| RunError::Config(format!("parsing {}: {e}", path.display())))
}

fn init_thread_pool() {
    if let Ok(v) = std::env::var("CONFOPT_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Run {
            config,
            out,
            trials,
            seed,
            allow_mismatch,
        } => {
            let mut cfg: ExperimentConfig = load_json(&config)?;
            if let Some(t) = trials {
                cfg.n_trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if allow_mismatch {
                cfg.solver.set_allow_mismatch(true);
            }
            let summary = runner::run_experiment(&cfg, &out)?;
            println!(
                "{} trials: objective {:.6} +- {:.6}, max violation {:.6} +- {:.6} -> {}",
                summary.trials.len(),
                summary.aggregate.mean_objective,
                summary.aggregate.std_objective,
                summary.aggregate.mean_max_violation,
                summary.aggregate.std_max_violation,
                out.join("summary.json").display()
            );
            Ok(())
        }
        Command::Oracle { config, out, seed } => {
            let mut cfg: OracleConfig = load_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let fixture = runner::run_bayes_oracle(&cfg, &out)?;
            println!(
                "oracle value {:.6} at weights {:?} -> {}",
                fixture.value,
                fixture.weights,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            config,
            classifier,
            seed,
        } => {
            let mut cfg: ExperimentConfig = load_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let summary = runner::eval_classifier(&cfg, &classifier)?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            Ok(())
        }
        Command::ValidateConfig { config } => {
            let cfg: ExperimentConfig = load_json(&config)?;
            cfg.validate().map_err(RunError::Config)?;
            println!("ok");
            Ok(())
        }
    }
}

fn main() {
    init_thread_pool();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
