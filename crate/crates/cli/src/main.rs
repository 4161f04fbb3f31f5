mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "featquant", version, about = "Ordinal quantification stress tests and feature-block selection")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// activity, toxicity, diversity or custom.
    #[arg(long, global = true)]
    task: Option<String>,
    /// CC, PACC, EMQ or MLPE.
    #[arg(long, global = true)]
    quantifier: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory holding features.csv, labels.csv and schema.txt.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset and comment stream.
    Synth,
    /// Derive ordinal labels for a task from a comment stream.
    Label,
    /// Fit one quantifier and estimate the prevalence of an unlabelled matrix.
    Quantify {
        /// Feature CSV to quantify.
        #[arg(long)]
        unlabelled: Option<PathBuf>,
    },
    /// Run the artificial-prevalence stress test on all features.
    Stress,
    /// Greedy feature-block selection with ablation importance.
    Select,
    /// Cross-task importance heatmap, overlap table and summary.
    Report {
        /// Output directories of `select` runs.
        runs: Vec<PathBuf>,
    },
}

#[derive(Debug)]
pub enum CliError {
    Core(featquant::Error),
    ConfigNotFound(String),
    Config(String),
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::ConfigNotFound(_) => "config-not-found",
            CliError::Config(_) => "config",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::ConfigNotFound(p) => write!(f, "config file {p} not found"),
            CliError::Config(m) => write!(f, "{m}"),
        }
    }
}

impl From<featquant::Error> for CliError {
    fn from(e: featquant::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        task: cli.task,
        quantifier: cli.quantifier,
        out: cli.out,
        threads: cli.threads,
        data: cli.data,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Label => commands::label(&cfg),
        Command::Quantify { unlabelled } => commands::quantify(&cfg, unlabelled),
        Command::Stress => commands::stress(&cfg),
        Command::Select => commands::select(&cfg),
        Command::Report { runs } => commands::report(&cfg, runs),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
