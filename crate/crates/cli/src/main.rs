//! Command-line harness: distribution study, gradient checks, toy training
//! and evaluation sweeps.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use djcm_core::toy::Stage;

#[derive(Debug)]
pub enum CliError {
    /// Invalid usage, configuration or missing inputs (exit 2).
    Config(String),
    /// A check ran and did not meet its threshold (exit 1).
    Threshold(String),
    /// The computation itself failed (exit 1).
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Threshold(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "error: {m}"),
            CliError::Threshold(m) => write!(f, "threshold failure: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "djcm", version, about = "Digital joint coding-modulation laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare hard and relaxed chains level by level for every (M, SNR) pair.
    VerifyDist {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check reverse-mode gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 100, hide = true)]
        cases: usize,
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Train the toy system through all three phases.
    TrainToy {
        #[arg(long)]
        config: PathBuf,
        /// Start at phase2 or phase3 from the previous phase's checkpoint.
        #[arg(long, value_parser = parse_stage)]
        resume: Option<Stage>,
    },
    /// Evaluate a checkpoint over the configured grid under both chains.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    match Stage::parse(s) {
        Some(st @ (Stage::Phase2 | Stage::Phase3)) => Ok(st),
        _ => Err(format!("expected phase2 or phase3, got '{s}'")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::VerifyDist { config, out } => commands::verify_dist(&config, out),
        Command::Gradcheck { cases, inject_fault } => commands::gradcheck(cases, inject_fault),
        Command::TrainToy { config, resume } => commands::train_toy(&config, resume),
        Command::Sweep { config, checkpoint } => commands::sweep(&config, &checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
