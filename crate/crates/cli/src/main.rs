//! `ledfit` command-line front end.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for unreadable or
//! invalid input, 3 when a computation fails numerically.

mod commands;
mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use config::FileConfig;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "LEDFIT_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(path: &Path, err: impl Display) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ledfit::error::ModelError> for CliError {
    fn from(e: ledfit::error::ModelError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ledfit",
    version,
    about = "Fit cosine-power lobe models to LED intensity distributions"
)]
struct Cli {
    /// `key = value` file supplying values for options not given as flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to $LEDFIT_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert between .ies files and `phi_deg,candela` sample CSV.
    Convert(ConvertArgs),
    /// Fit the model to one intensity distribution.
    Fit(FitArgs),
    /// Generate artificial instances with known coefficients.
    Gen(GenArgs),
    /// Run algorithm configurations over a dataset directory.
    Experiment(ExperimentArgs),
    /// Compute comparison tables from result CSVs.
    Stats(StatsArgs),
}

/// How a single sample set is taken from a photometric file.
#[derive(Debug, Clone, Args)]
struct SourceArgs {
    /// C-plane index to read (default 0).
    #[arg(long, conflicts_with = "average")]
    plane: Option<usize>,
    /// Average all C-planes instead of reading one.
    #[arg(long)]
    average: bool,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// A .ies file (converted to CSV) or a sample CSV (converted to .ies).
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Decimal places for written candela values; full precision if unset.
    #[arg(long)]
    decimals: Option<usize>,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Newton,
    If,
    #[value(name = "if+newton")]
    IfNewton,
    #[value(name = "s-newton")]
    SNewton,
    #[value(name = "l-newton")]
    LNewton,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Newton => "newton",
            Method::If => "if",
            Method::IfNewton => "if+newton",
            Method::SNewton => "s-newton",
            Method::LNewton => "l-newton",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Method as ValueEnum>::from_str(s, true)
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// A .ies file or a sample CSV.
    input: PathBuf,
    #[arg(long)]
    method: Option<Method>,
    /// Newton start: a CSV with columns a1..c3, or `random`.
    #[arg(long)]
    init: Option<String>,
    /// IF starts.
    #[arg(long)]
    starts: Option<usize>,
    /// Total heuristic evaluations (random initializations for s/l-newton).
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Candidates polished by Newton in s/l-newton.
    #[arg(long)]
    pool: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the timestamp header and record zero wall time.
    #[arg(long)]
    deterministic: bool,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Candela scale of the generating model.
    #[arg(long)]
    scale: Option<f64>,
    /// Decimal places in the written files; full precision if unset.
    #[arg(long)]
    decimals: Option<usize>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// Directory of .ies files, listed by manifest.csv when present.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// `all` or a comma-separated list of configuration names.
    #[arg(long, default_value = "all")]
    configs: String,
    /// Divide every configuration's budget by this factor.
    #[arg(long)]
    budget_divisor: Option<usize>,
    /// Omit the timestamp header and record zero wall time.
    #[arg(long)]
    deterministic: bool,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Report {
    Summary,
    Rank,
    Wilcoxon,
    Improvement,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// Results CSV from `experiment` or `fit`.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    report: Report,
    /// Baseline results for the improvement report.
    #[arg(long)]
    before: Option<PathBuf>,
    /// Improved results for the improvement report.
    #[arg(long)]
    after: Option<PathBuf>,
    /// Configuration taken as the baseline.
    #[arg(long)]
    before_config: Option<String>,
    /// Configuration taken as the improved result.
    #[arg(long)]
    after_config: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_threads(flag: Option<usize>, cfg: &FileConfig) -> Result<(), CliError> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a thread count, got `{v}`")))?,
        ),
        Err(_) => None,
    };
    let threads = cfg.resolve(flag, "threads", from_env.unwrap_or(0))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    init_threads(cli.threads, &cfg)?;
    match cli.command {
        Command::Convert(a) => commands::convert(a, &cfg),
        Command::Fit(a) => commands::fit(a, &cfg),
        Command::Gen(a) => commands::gen(a, &cfg),
        Command::Experiment(a) => commands::experiment(a, &cfg),
        Command::Stats(a) => commands::stats(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
