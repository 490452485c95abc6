use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::Result;
use clap::{Parser, Subcommand};
use volterra_ident::CaseName;

mod commands;
mod config;
mod manifest;

use config::{parse_lambdas, ExperimentConfig, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingInput { .. } => "missing-input",
        }
    }
}

#[derive(Debug, Clone)]
struct LambdaList(Vec<f64>);

impl FromStr for LambdaList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        parse_lambdas(s).map(LambdaList)
    }
}

/// Simulate, identify and forecast Volterra integral equations with noise.
#[derive(Parser)]
#[command(version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML); missing keys come from the case preset
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// case1, case2 or case3
    #[arg(long, global = true)]
    case: Option<CaseName>,

    /// Comma-separated noise levels, e.g. 0,1,5
    #[arg(long, global = true)]
    lambda: Option<LambdaList>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate ensembles and write measurement sets
    Simulate,
    /// Fit the network and θ to each measurement set
    Fit,
    /// Forecast bands with the fitted θ and check coverage
    Predict,
    /// Collect fit summaries into one table
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let ov = Overrides {
        case: cli.case,
        seed: cli.seed,
        out: cli.out,
        lambdas: cli.lambda.map(|l| l.0),
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &ov)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Fit => commands::fit(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<CliError>() {
            return c.category();
        }
        if let Some(c) = cause.downcast_ref::<volterra_ident::Error>() {
            return c.category();
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
        if cause.is::<serde_json::Error>() {
            return "serialization";
        }
    }
    "internal"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = category(&e);
            eprintln!("error[{cat}]: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(match cat {
                "config" => 2,
                "missing-input" => 3,
                _ => 1,
            })
        }
    }
}
