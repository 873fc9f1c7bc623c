//! `rescomp` command-line harness.

mod bench;
mod config;
mod control;
mod experiment;
mod generate;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rescomp", version, about = "Reservoir computing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a benchmark system and write it as CSV.
    GenerateData(generate::Args),
    /// Train and evaluate a model described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop control of the two-mass plant against its free response.
    ControlDemo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time forecast steps across reservoir sizes and training across lengths.
    Bench(bench::Args),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<rescomp::Error> for CliError {
    fn from(e: rescomp::Error) -> Self {
        use rescomp::Error as E;
        match e {
            E::DimensionMismatch { .. }
            | E::IndivisibleChunks { .. }
            | E::LocalityTooLarge { .. }
            | E::InvalidParameter { .. }
            | E::TooShort { .. }
            | E::UnknownSystem(_)
            | E::Csv(_)
            | E::VersionMismatch { .. }
            | E::CorruptChecksum
            | E::MalformedCheckpoint(_) => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o error: {e}"))
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("RESCOMP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Validation(format!("RESCOMP_THREADS: expected a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::GenerateData(args) => generate::run(&args),
        Command::Run { config, out } => experiment::run(&config, &out),
        Command::ControlDemo { config, out } => control::run(&config, &out),
        Command::Bench(args) => bench::run(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
