//! `hero-mux`: run, validate and score resiliency scenarios.
//!
//! Exit codes: 0 success, 1 I/O or telemetry error, 2 configuration error,
//! 3 invariant violation during a run (outputs are still written).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use hero_core::harness::{self, compute_metrics, HarnessError, Telemetry};
use hero_core::sim::scenario::{bundled, bundled_names};
use hero_core::sim::{ConfigError, RunOptions, ScenarioConfig};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "hero-mux", version, about = "Resilient multi-odometry scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write telemetry.csv, events.jsonl and metrics.json.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop after this many ticks.
        #[arg(long)]
        ticks: Option<u64>,
        /// Pace the run against the wall clock.
        #[arg(long)]
        real_time: bool,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: String,
    },
    /// Recompute metrics.json from telemetry.csv and events.jsonl.
    Metrics {
        /// Directory holding the telemetry of a run.
        #[arg(long)]
        dir: PathBuf,
        /// Write metrics.json into the directory instead of printing.
        #[arg(long)]
        write: bool,
    },
    /// Print the names of the bundled scenarios.
    ListScenarios,
}

fn load(spec: &str, seed: Option<u64>) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = ScenarioConfig::load(spec)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn config_failure(e: &ConfigError) -> ExitCode {
    match e.field_path() {
        Some(path) => eprintln!("configuration error at '{path}': {e}"),
        None => eprintln!("configuration error: {e}"),
    }
    ExitCode::from(EXIT_CONFIG)
}

fn run(cli: Cli) -> ExitCode {
    match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            ticks,
            real_time,
        } => {
            let cfg = match load(&scenario, seed) {
                Ok(cfg) => cfg,
                Err(e) => return config_failure(&e),
            };
            let opts = RunOptions {
                max_ticks: ticks,
                real_time,
            };
            match harness::run_to_dir(&cfg, &opts, &out) {
                Ok((t, m)) => {
                    info!(
                        "{}: {} ticks, availability {:.4}, {} switches",
                        cfg.name, m.ticks, m.availability, m.switch_count
                    );
                    let violations = harness::invariant_violations(&t, &m);
                    if violations.is_empty() {
                        ExitCode::SUCCESS
                    } else {
                        for v in &violations {
                            eprintln!("invariant violated: {v}");
                        }
                        ExitCode::from(EXIT_INVARIANT)
                    }
                }
                Err(HarnessError::Config(e)) => config_failure(&e),
                Err(HarnessError::Telemetry(e)) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_IO)
                }
            }
        }
        Command::Validate { scenario } => match load(&scenario, None) {
            Ok(cfg) => {
                println!(
                    "{}: ok ({} streams, {} failures, {} ticks)",
                    cfg.name,
                    cfg.streams.len(),
                    cfg.failures.len(),
                    cfg.tick_count()
                );
                ExitCode::SUCCESS
            }
            Err(e) => config_failure(&e),
        },
        Command::Metrics { dir, write } => {
            let t = match Telemetry::read_dir(&dir) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_IO);
                }
            };
            let m = compute_metrics(&t);
            if write {
                if let Err(e) = harness::write_metrics(&m, &dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_IO);
                }
            } else {
                print!("{}", m.to_json());
            }
            ExitCode::SUCCESS
        }
        Command::ListScenarios => {
            for name in bundled_names() {
                let description = bundled(name).map(|c| c.description).unwrap_or_default();
                println!("{name}\t{description}");
            }
            ExitCode::SUCCESS
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HERO_MUX_LOG", "warn")).init();
    let cli = Cli::parse();
    let code = run(cli);
    if code != ExitCode::SUCCESS {
        warn!("exiting with failure");
    }
    code
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_flag_overrides_file() {
        let cfg = load("hover", Some(99)).unwrap();
        assert_eq!(cfg.seed, 99);
        if let Err(e) = load("nope", None) {
            eprintln!("{e}");
        }
    }
}
