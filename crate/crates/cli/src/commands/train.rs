//! Training from a pair manifest.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use rhrnet_core::audio::{segment, SegmentMode};
use rhrnet_core::checkpoint::Checkpoint;
use rhrnet_core::training::{Dataset, TrainError, Trainer};
use rhrnet_core::ModelParams;

use super::{create_dir, load_clip};
use crate::config::{parse_scale, RunConfig};
use crate::error::{data, CliError, CliResult};
use crate::manifest::Manifest;

pub const HISTORY_FILE: &str = "history.log";
pub const BEST_FILE: &str = "best.ckpt";
pub const LAST_FILE: &str = "last.ckpt";

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest of clean,noisy,snr rows.
    #[arg(long)]
    pub data: PathBuf,
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the history log and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for initialization, shuffling and the validation split.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model size: tiny, default, or a shrink factor.
    #[arg(long, value_parser = parse_scale)]
    pub scale: Option<f64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Segments per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Share of segments held out for validation (0 validates on the training set).
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Resample inputs that are not at 16 kHz.
    #[arg(long)]
    pub resample: bool,
    /// Continue from a `last.ckpt` written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

fn resolve_config(args: &TrainArgs) -> CliResult<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(s) = args.scale {
        config.model.scale = Some(s);
    }
    if let Some(e) = args.epochs {
        config.schedule.max_epochs = e;
    }
    if let Some(b) = args.batch_size {
        config.schedule.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.schedule.lr_init = lr;
    }
    if let Some(v) = args.val_fraction {
        config.data.val_fraction = v;
    }
    config.data.resample |= args.resample;
    config.validate()?;
    Ok(config)
}

/// Training-mode segments of every manifest pair, in manifest order.
pub fn load_dataset(manifest: &Manifest, segment_len: usize, resample: bool) -> CliResult<Dataset<f32>> {
    if manifest.rows.is_empty() {
        return Err(CliError::Data("manifest has no rows".into()));
    }
    let per_pair = manifest
        .rows
        .par_iter()
        .map(|row| {
            let clean = load_clip(&manifest.resolve(&row.clean), None, resample)?;
            let noisy = load_clip(&manifest.resolve(&row.noisy), None, resample)?;
            if clean.len() != noisy.len() {
                return Err(CliError::Data(format!(
                    "{} and {} differ in length",
                    row.clean, row.noisy
                )));
            }
            let c = segment(&clean.samples, segment_len, SegmentMode::Train).map_err(|e| data(&row.clean, e))?;
            let n = segment(&noisy.samples, segment_len, SegmentMode::Train).map_err(|e| data(&row.noisy, e))?;
            Ok((n.segments, c.segments))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (mut noisy, mut clean) = (Vec::new(), Vec::new());
    for (n, c) in per_pair {
        noisy.extend(n);
        clean.extend(c);
    }
    Dataset::from_samples(&noisy, &clean).map_err(|e| CliError::Data(e.to_string()))
}

fn train_error(e: TrainError) -> CliError {
    match e {
        TrainError::NonFinite { .. } => CliError::Numeric(e.to_string()),
        TrainError::Config(m) => CliError::Usage(m),
        other => CliError::Data(other.to_string()),
    }
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| data(path.display(), e))
}

pub fn run(args: &TrainArgs) -> CliResult<()> {
    let config = resolve_config(args)?;
    let manifest = Manifest::read(&args.data)?;
    create_dir(&args.out)?;

    let (trainer, model_config, seed) = match &args.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            let optimizer = ck
                .optimizer
                .ok_or_else(|| CliError::Data(format!("{}: no optimizer state to resume from", path.display())))?;
            let state = ck
                .train_state
                .ok_or_else(|| CliError::Data(format!("{}: no training state to resume from", path.display())))?;
            let best_path = path.with_file_name(BEST_FILE);
            let best = if best_path.exists() {
                Some(load_checkpoint(&best_path)?.params)
            } else {
                None
            };
            let model_config = ck.params.config().clone();
            let seed = args.seed.unwrap_or(ck.seed);
            let trainer = Trainer::resume(ck.params, best, optimizer, state, config.schedule.clone(), seed)
                .map_err(train_error)?;
            (trainer, model_config, seed)
        }
        None => {
            let model_config = config.model_config()?;
            let params = ModelParams::build(&model_config, config.seed).map_err(|e| CliError::Usage(e.to_string()))?;
            let trainer = Trainer::new(params, config.schedule.clone(), config.seed).map_err(train_error)?;
            (trainer, model_config, config.seed)
        }
    };

    let dataset = load_dataset(&manifest, model_config.segment_len, config.data.resample)?;
    let (train, holdout) = dataset
        .split_holdout(config.data.val_fraction, seed)
        .map_err(train_error)?;
    let val = if holdout.is_empty() { train.clone() } else { holdout };
    println!(
        "training on {} segments, validating on {} ({} parameters)",
        train.len(),
        val.len(),
        model_config.param_count()
    );

    let log_path = args.out.join(HISTORY_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(&log_path)
        .map_err(|e| data(log_path.display(), e))?;
    let best_path = args.out.join(BEST_FILE);
    let last_path = args.out.join(LAST_FILE);

    let outcome = trainer
        .fit(&train, &val, |report| {
            let line = report.record.log_line();
            println!("{line}");
            writeln!(log, "{line}").map_err(|e| e.to_string())?;
            if report.improved {
                Checkpoint::new(report.best.clone(), seed)
                    .save(&best_path)
                    .map_err(|e| e.to_string())?;
            }
            Checkpoint {
                params: report.params.clone(),
                seed,
                optimizer: Some(report.optimizer.clone()),
                train_state: Some(report.state.clone()),
            }
            .save(&last_path)
            .map_err(|e| e.to_string())
        })
        .map_err(train_error)?;
    if !best_path.exists() {
        Checkpoint::new(outcome.best.clone(), seed)
            .save(&best_path)
            .map_err(|e| data(best_path.display(), e))?;
    }
    println!(
        "best epoch {} val_loss {:.6e}; wrote {}",
        outcome.best_epoch,
        outcome.best_val,
        best_path.display()
    );
    Ok(())
}
