//! Command-line front end: one subcommand per workflow step, every run fully
//! determined by the config file and seed.

use clap::{Parser, Subcommand};
use feddpq_core::harness::{self, Prepared, Scenario};
use feddpq_core::{metrics, Config};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "feddpq",
    version,
    about = "Simulate and optimize energy-aware federated learning over lossy uplinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario end to end and write per-round metrics.
    Simulate {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics output file (JSON lines).
        #[arg(long, default_value = "metrics.jsonl")]
        out: PathBuf,
        /// TFL, FedDPQ, FedDPQ-noDA, FedDPQ-noPQ, FedDPQ-noPC, or custom.
        #[arg(long, default_value = "custom")]
        scenario: String,
    },
    /// Search for the cheapest strategy under the analytic round budget.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Result file: strategy, objective, and descent trace (JSON).
        #[arg(long, default_value = "optimized.json")]
        out: PathBuf,
        /// Re-score the optimized strategy with a full simulation run.
        #[arg(long)]
        validate: bool,
        /// Metrics file for the validation run.
        #[arg(long, default_value = "optimize-metrics.jsonl")]
        metrics: PathBuf,
    },
    /// Print the convergence-bound decomposition for the configured strategy.
    Bound {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the analysis constants from short probe runs.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the estimates as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured scenario grid and write one metrics file per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> feddpq_core::Result<Config> {
    let mut config = Config::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> feddpq_core::Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| feddpq_core::Error::Invalid(format!("result not serializable: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> feddpq_core::Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            out,
            scenario,
        } => {
            let config = load(&config, seed)?;
            let scenario: Scenario = scenario.parse()?;
            let prepared = Prepared::build(&config)?;
            let base = config.initial_strategy()?;
            let run = prepared.run_scenario(scenario, &base)?;
            metrics::write_records(&out, &run.records)?;
            println!(
                "{}: rounds {} target {} energy {:.6e} J -> {}",
                run.scenario,
                run.summary.rounds_run,
                match run.summary.rounds_to_target {
                    Some(r) => format!("reached at round {r}"),
                    None => "not reached".to_string(),
                },
                run.total_energy,
                out.display()
            );
        }
        Command::Optimize {
            config,
            seed,
            out,
            validate,
            metrics: metrics_path,
        } => {
            let config = load(&config, seed)?;
            let prepared = Prepared::build(&config)?;
            let outcome = prepared.optimize()?;
            write_json(
                &out,
                &serde_json::json!({
                    "strategy": outcome.strategy,
                    "objective": outcome.objective,
                    "iterations": outcome.iterations,
                    "trace": outcome.trace,
                }),
            )?;
            println!(
                "optimized objective {:.6e} J in {} sweeps -> {}",
                outcome.objective,
                outcome.iterations,
                out.display()
            );
            if validate {
                let run = prepared.run_scenario(Scenario::FedDpq, &outcome.strategy)?;
                metrics::write_records(&metrics_path, &run.records)?;
                println!(
                    "validation: rounds {} target {} energy {:.6e} J -> {}",
                    run.summary.rounds_run,
                    match run.summary.rounds_to_target {
                        Some(r) => format!("reached at round {r}"),
                        None => "not reached".to_string(),
                    },
                    run.total_energy,
                    metrics_path.display()
                );
            }
        }
        Command::Bound { config, seed, out } => {
            let config = load(&config, seed)?;
            let prepared = Prepared::build(&config)?;
            let report = prepared.bound_report(&config.initial_strategy()?)?;
            print!("{report}");
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
        }
        Command::Calibrate { config, seed, out } => {
            let config = load(&config, seed)?;
            let prepared = Prepared::build(&config)?;
            let estimates = prepared.calibrate()?;
            let text = serde_json::to_string_pretty(&estimates)
                .map_err(|e| feddpq_core::Error::Invalid(format!("estimates: {e}")))?;
            println!("{text}");
            if let Some(out) = out {
                write_json(&out, &estimates)?;
            }
        }
        Command::Sweep { config, seed, out } => {
            let config = load(&config, seed)?;
            let rows = harness::run_sweep(&config, &out)?;
            println!("{} runs -> {}", rows.len(), out.display());
            for row in &rows {
                println!(
                    "{} pi={} U={} S={} seed={}: rounds {} {} energy {:.6e} J",
                    row.scenario,
                    row.dirichlet_pi,
                    row.devices,
                    row.participants,
                    row.seed,
                    row.rounds_run,
                    match row.rounds_to_target {
                        Some(r) => format!("(target at {r})"),
                        None => "(target not reached)".to_string(),
                    },
                    row.total_energy
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
