//! `huberloc` command line: scenario synthesis, one-shot solving, paired
//! Monte-Carlo evaluation, measurement-campaign dataset runs, and estimate
//! feasibility checks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime or
//! solver failure.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use huberloc_core::dataio::DataError;
use huberloc_core::measurement::MeasurementError;
use huberloc_core::{EvalError, NetworkError, SolveError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::BadConfig(_) | SolveError::Measurement(MeasurementError::LabelsRequired) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) | DataError::Json(_) | DataError::Network(_) => {
                CliError::Runtime(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<MeasurementError> for CliError {
    fn from(e: MeasurementError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "huberloc",
    version,
    about = "Distributed cooperative localization under NLOS range bias: two-stage Huber descent, baselines, and a Monte-Carlo harness"
)]
struct Cli {
    /// Worker threads for Monte-Carlo runs; results are identical for any
    /// value (aggregation is run-ordered).
    #[arg(long, global = true)]
    parallel: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize network and measurement files from a scenario config.
    Simulate {
        /// Scenario TOML; omitted = built-in reference defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (coordinates.csv, measurements.csv).
        #[arg(long)]
        out: PathBuf,
        /// Master seed (placement, labels, noise derive from it).
        #[arg(long)]
        seed: u64,
        /// Which Monte-Carlo run of the scenario to materialize.
        #[arg(long, default_value_t = 0)]
        run_index: u64,
    },
    /// Solve one instance from network + measurement files.
    Solve {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        /// One of: two_stage, relaxed_huber, relaxed_nls, raw_huber, pocs, oracle_los.
        #[arg(long)]
        method: String,
        /// Output directory (estimates.csv, trace.jsonl).
        #[arg(long)]
        out: PathBuf,
        /// Seed for the random initialization.
        #[arg(long)]
        seed: u64,
        /// Scenario TOML supplying solver parameters.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Paired Monte-Carlo evaluation across methods.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated method list.
        #[arg(long)]
        methods: String,
        /// Output directory (cdf_*.csv, report_*.jsonl, summary.csv).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Run one method on a measurement-campaign bundle under a debias mode.
    Dataset {
        /// Bundle directory (coordinates.csv + measurements.csv).
        #[arg(long, conflicts_with = "surrogate")]
        bundle: Option<PathBuf>,
        /// Use the built-in 44-node surrogate bundle instead of files.
        #[arg(long)]
        surrogate: bool,
        #[arg(long, default_value_t = 1)]
        surrogate_seed: u64,
        /// One of: raw, half, full.
        #[arg(long)]
        debias: String,
        /// Seed choosing which half of the links gets debiased (half mode);
        /// defaults to --seed.
        #[arg(long)]
        debias_seed: Option<u64>,
        /// Average bias to subtract; defaults to the bundle's own value.
        #[arg(long)]
        avg_bias: Option<f64>,
        #[arg(long)]
        method: String,
        /// Number of re-initializations.
        #[arg(long, default_value_t = 100)]
        mc_runs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Check estimates for feasibility against the measured balls.
    Check {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
        #[arg(long)]
        estimates: PathBuf,
        /// Allowed ball violation in meters.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.parallel {
        if n == 0 {
            return Err(CliError::Usage("--parallel must be >= 1".into()));
        }
        // Ignore the error if a pool already exists (e.g. under tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            run_index,
        } => commands::simulate(config.as_deref(), &out, seed, run_index),
        Command::Solve {
            network,
            measurements,
            method,
            out,
            seed,
            config,
        } => commands::solve(&network, &measurements, &method, &out, seed, config.as_deref()),
        Command::Eval {
            config,
            methods,
            out,
            seed,
        } => commands::eval(config.as_deref(), &methods, &out, seed),
        Command::Dataset {
            bundle,
            surrogate,
            surrogate_seed,
            debias,
            debias_seed,
            avg_bias,
            method,
            mc_runs,
            out,
            seed,
            config,
        } => commands::dataset(commands::DatasetArgs {
            bundle: bundle.as_deref(),
            surrogate,
            surrogate_seed,
            debias: &debias,
            debias_seed,
            avg_bias,
            method: &method,
            mc_runs,
            out: &out,
            seed,
            config: config.as_deref(),
        }),
        Command::Check {
            network,
            measurements,
            estimates,
            tol,
        } => commands::check(&network, &measurements, &estimates, tol),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are not errors.
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
