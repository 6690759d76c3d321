use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod csvio;
mod experiment;
mod run;

/// An error with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    /// Errors raised while fitting: bad settings are configuration errors,
    /// everything else is numerical.
    pub fn fit(e: sgasp::Error) -> Self {
        use sgasp::Error::*;
        let code = match e {
            Argument(_) | Domain(_) | Shape(_) => 1,
            Numerical { .. } | Model(_) | Optimization(_) | Initialization(_) => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "sgasp", version, about = "Computer model calibration with GaSP, S-GaSP and O-GaSP discrepancies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the calibration parameters and write the chain and summaries.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Predict at new inputs from a previous calibration run.
    Predict {
        #[arg(long)]
        config: PathBuf,
    },
    /// Regenerate the data of a built-in study.
    Experiment {
        /// One of fig1, park, sine, nonlinear, branin.
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        outdir: PathBuf,
    },
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SGASP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::config(format!("SGASP_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::config(format!("cannot size the worker pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = init_threads().and_then(|_| match cli.command {
        Command::Calibrate { config } => run::calibrate(&config),
        Command::Predict { config } => run::predict(&config),
        Command::Experiment { name, seed, outdir } => experiment::run(&name, seed, &outdir),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
