//! Batch front door: configure a spectrum, coupling, grid and experiment from
//! a JSON document; run simulations and checks; emit CSV/JSON files.
//!
//! Exit codes: 0 ok, 1 check failure (with `--check`), 2 config error,
//! 3 runtime error.

use clap::{Args, Parser, Subcommand};
use reduction_lab::config::{ExperimentKind, RunConfig};
use reduction_lab::runner;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable that overrides the config seed.
const SEED_ENV: &str = "REDUCTION_LAB_SEED";

#[derive(Parser)]
#[command(
    name = "reduction-lab",
    about = "Energy-based stochastic state reduction laboratory",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single exact trajectory and export it as CSV
    Simulate(RunArgs),
    /// Run a path ensemble: Born statistics, martingale and variance checks
    Ensemble(RunArgs),
    /// Compare the discretized filters against the exact filter
    OracleCompare(RunArgs),
    /// Finite-time collapse and Brownian-bridge equivalence checks
    FiniteTime(RunArgs),
    /// Exact-vs-Euler-Maruyama strong convergence sweep
    Convergence(RunArgs),
    /// List every violated precondition of a config without running
    Validate {
        /// Path to the JSON run configuration
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Path to the JSON run configuration
    config: PathBuf,
    /// Master seed (takes precedence over REDUCTION_LAB_SEED and the config)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's out_dir)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Cap on worker threads for path-parallel experiments
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 1 if any acceptance flag fails
    #[arg(long)]
    check: bool,
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => validate_command(&config),
        Command::Simulate(args) => run_command(args, ExperimentKind::Trajectory),
        Command::Ensemble(args) => run_command(args, ExperimentKind::Ensemble),
        Command::OracleCompare(args) => run_command(args, ExperimentKind::OracleCompare),
        Command::FiniteTime(args) => run_command(args, ExperimentKind::FiniteTime),
        Command::Convergence(args) => run_command(args, ExperimentKind::Convergence),
    }
}

fn load_config(path: &Path) -> Result<RunConfig, ExitCode> {
    RunConfig::from_file(path).map_err(|e| {
        eprintln!("config error: {e}");
        ExitCode::from(EXIT_CONFIG)
    })
}

fn validate_command(path: &Path) -> ExitCode {
    let config = match load_config(path) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let diags = config.validate();
    if diags.is_empty() {
        println!("config ok");
        ExitCode::SUCCESS
    } else {
        for d in &diags {
            println!("config error at {d}");
        }
        ExitCode::from(EXIT_CONFIG)
    }
}

fn run_command(args: RunArgs, experiment: ExperimentKind) -> ExitCode {
    let mut config = match load_config(&args.config) {
        Ok(c) => c,
        Err(code) => return code,
    };

    // The subcommand selects the experiment; `ensemble` keeps a configured
    // partial_measurement variant.
    config.experiment = match (experiment, config.experiment) {
        (ExperimentKind::Ensemble, ExperimentKind::PartialMeasurement) => {
            ExperimentKind::PartialMeasurement
        }
        (selected, _) => selected,
    };

    // Seed precedence: --seed flag, then REDUCTION_LAB_SEED, then the config.
    if let Ok(v) = std::env::var(SEED_ENV) {
        match v.parse::<u64>() {
            Ok(seed) => config.seed = seed,
            Err(_) => {
                eprintln!("config error: {SEED_ENV}={v} is not a valid u64 seed");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }

    let diags = config.validate();
    if !diags.is_empty() {
        for d in &diags {
            eprintln!("config error at {d}");
        }
        return ExitCode::from(EXIT_CONFIG);
    }

    let out_dir = args
        .out_dir
        .unwrap_or_else(|| PathBuf::from(&config.out_dir));
    match runner::run(&config, &out_dir, args.threads) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            match outcome.checks {
                Some(true) => println!("checks: pass"),
                Some(false) => println!("checks: FAIL"),
                None => {}
            }
            if args.check && outcome.checks == Some(false) {
                ExitCode::from(EXIT_CHECK_FAILED)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("runtime error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
