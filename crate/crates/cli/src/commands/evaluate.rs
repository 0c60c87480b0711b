//! SSNR and STOI over a pair manifest.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use rhrnet_core::checkpoint::Checkpoint;
use rhrnet_core::metrics::{ssnr, stoi, MetricError, MetricReport, MetricRow};
use rhrnet_core::model::SAMPLE_RATE;

use super::enhance::enhance_samples;
use super::load_clip;
use crate::error::{data, CliError, CliResult};
use crate::manifest::Manifest;

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Manifest whose `noisy` column holds the signal to score against `clean`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// CSV report destination (file,ssnr,stoi).
    #[arg(long)]
    pub out: PathBuf,
    /// Enhance the `noisy` column with this model before scoring.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Resample files that are not at 16 kHz.
    #[arg(long)]
    pub resample: bool,
}

fn metric_error(file: &str, e: MetricError) -> CliError {
    data(file, e)
}

pub fn run(args: &EvaluateArgs) -> CliResult<()> {
    let manifest = Manifest::read(&args.pairs)?;
    if manifest.rows.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: manifest has no rows",
            args.pairs.display()
        )));
    }
    let model = match &args.model {
        Some(p) => Some(Checkpoint::load(p).map_err(|e| data(p.display(), e))?.params),
        None => None,
    };
    let rows = manifest
        .rows
        .par_iter()
        .map(|row| {
            let clean = load_clip(&manifest.resolve(&row.clean), None, args.resample)?;
            let test = load_clip(&manifest.resolve(&row.noisy), None, args.resample)?;
            let test = match &model {
                Some(m) => enhance_samples(m, &test.samples)?,
                None => test.samples,
            };
            Ok(MetricRow {
                file: row.noisy.clone(),
                ssnr: ssnr(&clean.samples, &test, SAMPLE_RATE).map_err(|e| metric_error(&row.noisy, e))?,
                stoi: stoi(&clean.samples, &test, SAMPLE_RATE).map_err(|e| metric_error(&row.noisy, e))?,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = MetricReport { rows };
    let mut w = csv::Writer::from_path(&args.out).map_err(|e| data(args.out.display(), e))?;
    w.write_record(["file", "ssnr", "stoi"])
        .map_err(|e| data(args.out.display(), e))?;
    for r in &report.rows {
        w.write_record([r.file.clone(), format!("{:.6}", r.ssnr), format!("{:.6}", r.stoi)])
            .map_err(|e| data(args.out.display(), e))?;
    }
    w.flush().map_err(|e| data(args.out.display(), e))?;
    print!("{}", report.table());
    Ok(())
}
