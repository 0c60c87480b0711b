//! `rhrnet`: mix data, train, enhance, evaluate and check gradients.

mod commands;
mod config;
mod error;
mod manifest;

use clap::{Parser, Subcommand};

use commands::{enhance, evaluate, gradcheck, mix, train};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rhrnet", version, about = "Residual hourglass GRU speech enhancement")]
struct Cli {
    /// Worker threads for batch gradients and per-file work. Results do not
    /// depend on this value.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write paired clean/noisy WAVs and a manifest.
    Mix(mix::MixArgs),
    /// Train a model on a manifest of pairs.
    Train(train::TrainArgs),
    /// Enhance one WAV file with a trained model.
    Enhance(enhance::EnhanceArgs),
    /// Score pairs with segmental SNR and STOI.
    Evaluate(evaluate::EvaluateArgs),
    /// Compare backpropagated gradients with finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if cli.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    match &cli.command {
        Command::Mix(a) => mix::run(a),
        Command::Train(a) => train::run(a),
        Command::Enhance(a) => enhance::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Gradcheck(a) => gradcheck::run(a),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("rhrnet: {e}");
        std::process::exit(e.exit_code());
    }
}
