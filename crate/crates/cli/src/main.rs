//! `ggmp` command-line tool: generate the synthetic benchmark, fit models,
//! predict, evaluate and run the weight ablation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ModelArgs;

#[derive(Debug, Parser)]
#[command(name = "ggmp", version, about = "Generalized Gaussian mixture processes for distribution-valued regression")]
struct Cli {
    /// TOML file with model settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "GGMP_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic benchmark as CSV files.
    Synth(commands::SynthArgs),
    /// Fit a model to a sample CSV and save it as JSON.
    Fit {
        #[command(flatten)]
        io: commands::FitArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate a fitted model's predictive at given inputs.
    Predict(commands::PredictArgs),
    /// Score a model on held-out inputs and write a metrics CSV.
    Eval(commands::EvalArgs),
    /// Compare equal, shared and input-dependent weights across K.
    AblateWeights {
        #[command(flatten)]
        io: commands::AblateArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
}

/// Failure classes, mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<ggmp::Error> for CliError {
    fn from(e: ggmp::Error) -> Self {
        use ggmp::Error as E;
        let msg = e.to_string();
        match e.root() {
            E::NotPositiveDefinite | E::MatrixSqrt(_) | E::Numerical(_) | E::BudgetExceeded { .. } => {
                CliError::Numerical(msg)
            }
            _ => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file_threads = match &cli.config {
        Some(p) => config::read_config_file(p)?.threads,
        None => None,
    };
    if let Some(n) = cli.threads.or(file_threads) {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit { io, model } => commands::fit(io, model, cfg),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::AblateWeights { io, model } => commands::ablate(io, model, cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
