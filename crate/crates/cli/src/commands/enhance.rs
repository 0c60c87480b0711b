//! Applying a trained model to a WAV file.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use rhrnet_core::audio::{reassemble, resample, segment, write_wav, AudioClip, SegmentMode};
use rhrnet_core::checkpoint::Checkpoint;
use rhrnet_core::model::SAMPLE_RATE;
use rhrnet_core::{ModelParams, Tensor};

use crate::error::{data, CliError, CliResult};

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Noisy input WAV.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Enhanced output WAV, same rate and length as the input.
    #[arg(long)]
    pub out: PathBuf,
    /// Accept input at any rate: process at 16 kHz and convert back.
    #[arg(long)]
    pub resample: bool,
    /// Channel to read from a multi-channel file.
    #[arg(long)]
    pub channel: Option<u16>,
}

/// Non-overlapping segments through the model, reassembled to the input length.
pub fn enhance_samples(params: &ModelParams<f32>, samples: &[f32]) -> CliResult<Vec<f32>> {
    let l = params.config().segment_len;
    let mut set = segment(samples, l, SegmentMode::Eval).map_err(|e| CliError::Data(e.to_string()))?;
    set.segments = set
        .segments
        .par_iter()
        .map(|s| params.forward(&Tensor::column(s)).map(Tensor::into_data))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Numeric(e.to_string()))?;
    let out = reassemble(&set).map_err(|e| CliError::Data(e.to_string()))?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("model produced non-finite samples".into()));
    }
    Ok(out)
}

pub fn run(args: &EnhanceArgs) -> CliResult<()> {
    let params = Checkpoint::load(&args.model)
        .map_err(|e| data(args.model.display(), e))?
        .params;
    let clip = rhrnet_core::audio::read_wav(&args.input, args.channel).map_err(|e| data(args.input.display(), e))?;
    if clip.is_empty() {
        return Err(data(args.input.display(), "no samples"));
    }
    let out = if clip.rate == SAMPLE_RATE {
        AudioClip::new(enhance_samples(&params, &clip.samples)?, SAMPLE_RATE)
    } else if args.resample {
        let at_model_rate = resample(&clip, SAMPLE_RATE).map_err(|e| data(args.input.display(), e))?;
        let enhanced = AudioClip::new(enhance_samples(&params, &at_model_rate.samples)?, SAMPLE_RATE)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let mut back = resample(&enhanced, clip.rate).map_err(|e| CliError::Data(e.to_string()))?;
        back.samples.resize(clip.len(), 0.0);
        Ok(back)
    } else {
        return Err(CliError::Data(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz (pass --resample to convert)",
            args.input.display(),
            clip.rate
        )));
    }
    .map_err(|e| CliError::Numeric(e.to_string()))?;
    write_wav(&out, &args.out).map_err(|e| data(args.out.display(), e))?;
    println!("wrote {} ({} samples)", args.out.display(), out.len());
    Ok(())
}
