//! End-to-end finite-difference gradient check.

use clap::Args;
use rhrnet_core::gradcheck::{gradcheck, GradcheckOptions, DEFAULT_TOLERANCE};
use rhrnet_core::ModelConfig;

use crate::config::parse_scale;
use crate::error::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model size: tiny, default, or a shrink factor.
    #[arg(long, default_value = "tiny", value_parser = parse_scale)]
    pub scale: f64,
    /// Seed for parameters and the probe input/target pair.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds to check, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Perturb one analytic gradient entry (negative control for tests).
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

pub fn run(args: &GradcheckArgs) -> CliResult<()> {
    let config = ModelConfig::scaled(args.scale).map_err(|e| CliError::Usage(e.to_string()))?;
    let options = GradcheckOptions {
        corrupt_gradient: args.corrupt_gradient,
        ..GradcheckOptions::default()
    };
    let mut worst = 0.0f64;
    for seed in args.seed..args.seed + args.seeds.max(1) {
        let report = gradcheck(&config, seed, &options).map_err(|e| CliError::Numeric(e.to_string()))?;
        println!(
            "seed {seed}: {} parameters checked, {} excluded at PReLU kinks",
            report.checked(),
            report.kinks()
        );
        println!("  {:<8} {:>12}  worst entry", "layer", "max_rel_err");
        for l in &report.layers {
            println!(
                "  {:<8} {:>12.3e}  {}[{}]",
                l.layer, l.max_rel_error, l.worst.0, l.worst.1
            );
        }
        worst = worst.max(report.max_rel_error());
    }
    println!("max relative error {worst:.3e} (tolerance {DEFAULT_TOLERANCE:e})");
    if worst < DEFAULT_TOLERANCE {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "max relative error {worst:.3e} is not below {DEFAULT_TOLERANCE:e}"
        )))
    }
}
