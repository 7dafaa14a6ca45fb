//! Command-line entry point. Verbosity is controlled by the `EOT_LOG`
//! environment variable (error, warn, info, debug, trace).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eot_cli::commands;
use eot_cli::config::{RunConfig, PRESET_NAMES};

#[derive(Parser)]
#[command(name = "eot", about = "Extended-object tracking benchmark harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigSource {
    /// JSON run configuration.
    #[arg(long, value_name = "FILE", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration preset.
    #[arg(long, value_parser = PRESET_NAMES)]
    preset: Option<String>,
    /// Override the base seed (scenario seed for simulate, filter/run seed
    /// otherwise).
    #[arg(long)]
    seed: Option<u64>,
    /// Run the full-detection mismatched baseline.
    #[arg(long)]
    ppp_mode: bool,
}

impl ConfigSource {
    fn resolve(&self, seed_target: SeedTarget) -> Result<RunConfig, String> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => RunConfig::load(path).map_err(|e| e.to_string())?,
            (None, Some(name)) => {
                RunConfig::preset(name).ok_or_else(|| format!("unknown preset {name}"))?
            }
            _ => return Err("exactly one of --config or --preset is required".into()),
        };
        if let Some(seed) = self.seed {
            match seed_target {
                SeedTarget::Scenario => cfg.scenario.seed = seed,
                SeedTarget::Runs => cfg.runs.base_seed = seed,
            }
        }
        if self.ppp_mode {
            cfg.filter.ppp_mode = true;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy)]
enum SeedTarget {
    Scenario,
    Runs,
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground truth and measurement scans.
    Simulate {
        #[command(flatten)]
        source: ConfigSource,
        /// Output scenario JSON file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run the filter over a simulated scenario.
    Track {
        #[command(flatten)]
        source: ConfigSource,
        /// Scenario file produced by `simulate`.
        #[arg(long, value_name = "FILE")]
        scans: PathBuf,
        /// Output estimates JSON file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score an estimates file against the scenario truth.
    Evaluate {
        #[command(flatten)]
        source: ConfigSource,
        /// Scenario file holding the ground truth.
        #[arg(long, value_name = "FILE")]
        truth: PathBuf,
        /// Estimates file produced by `track`.
        #[arg(long, value_name = "FILE")]
        estimates: PathBuf,
        /// Output CSV file.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Run the Monte-Carlo study and emit per-run and summary metrics.
    Montecarlo {
        #[command(flatten)]
        source: ConfigSource,
        /// Output directory.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Worker threads for independent runs (0 = all cores).
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EOT_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { source, out } => source
            .resolve(SeedTarget::Scenario)
            .and_then(|cfg| commands::cmd_simulate(&cfg, &out).map_err(|e| e.to_string())),
        Command::Track { source, scans, out } => source.resolve(SeedTarget::Runs).and_then(|cfg| {
            commands::cmd_track(&cfg, &scans, &out, cfg.runs.base_seed).map_err(|e| e.to_string())
        }),
        Command::Evaluate { source, truth, estimates, out } => {
            source.resolve(SeedTarget::Runs).and_then(|cfg| {
                commands::cmd_evaluate(&truth, &estimates, &out, &cfg.gospa)
                    .map_err(|e| e.to_string())
            })
        }
        Command::Montecarlo { source, out, jobs } => {
            source.resolve(SeedTarget::Runs).and_then(|cfg| {
                let jobs = if jobs == 0 {
                    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
                } else {
                    jobs
                };
                commands::cmd_montecarlo(&cfg, &out, jobs).map(|_| ()).map_err(|e| e.to_string())
            })
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}
