//! Paired clean/noisy WAVs plus a manifest.

use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use rhrnet_core::audio::{mix_with_spec, read_wav, synth_pairs, write_wav, CleanKind, MixSpec, NoiseKind, SynthPair};
use rhrnet_core::model::SAMPLE_RATE;

use super::{create_dir, load_clip};
use crate::error::{data, CliError, CliResult};
use crate::manifest::{Manifest, ManifestRow};

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Directory of clean 16 kHz WAV files to mix.
    #[arg(long, conflicts_with = "synth")]
    pub clean: Option<PathBuf>,
    /// Number of synthetic speech-like clean clips to generate instead.
    #[arg(long)]
    pub synth: Option<usize>,
    /// Noise: `white`, `babble`, or a path to a 16 kHz WAV recording.
    #[arg(long, default_value = "white")]
    pub noise: String,
    /// Comma-separated SNR values in dB, cycled over the pairs.
    #[arg(long, default_value = "0,5,10,15", value_parser = parse_snr_list)]
    pub snr: SnrList,
    /// Seed for clean synthesis, noise excerpts and mixing.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Length of each synthetic clip in seconds.
    #[arg(long, default_value_t = 2.0)]
    pub clip_secs: f64,
    /// Generate pure tones at this frequency instead of speech-like clips.
    #[arg(long)]
    pub sine: Option<f64>,
    /// Resample clean files that are not at 16 kHz.
    #[arg(long)]
    pub resample: bool,
    /// Output directory for clean/, noisy/ and manifest.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrList(pub Vec<f64>);

pub fn parse_snr_list(s: &str) -> Result<SnrList, String> {
    let values = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| format!("invalid SNR value {v:?}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.is_empty() {
        return Err("empty SNR list".into());
    }
    Ok(SnrList(values))
}

fn noise_kind(spec: &str) -> CliResult<NoiseKind> {
    match spec {
        "white" => Ok(NoiseKind::White),
        "babble" => Ok(NoiseKind::Babble),
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return Err(CliError::Usage(format!(
                    "--noise {path:?} is neither white, babble nor an existing file"
                )));
            }
            let clip = read_wav(p, None).map_err(|e| data(p.display(), e))?;
            if clip.rate != SAMPLE_RATE {
                return Err(CliError::Data(format!("{path}: noise must be {SAMPLE_RATE} Hz")));
            }
            Ok(NoiseKind::Recording(clip))
        }
    }
}

pub fn run(args: &MixArgs) -> CliResult<()> {
    if args.clean.is_none() && args.synth.is_none() {
        return Err(CliError::Usage("give --clean DIR or --synth N".into()));
    }
    if args.synth == Some(0) {
        return Err(CliError::Usage("--synth must be at least 1".into()));
    }
    if !(args.clip_secs > 0.0 && args.clip_secs.is_finite()) {
        return Err(CliError::Usage("--clip-secs must be positive".into()));
    }
    let mut spec = MixSpec::new(args.snr.0.clone(), args.seed, noise_kind(&args.noise)?);
    spec.clip_len = (args.clip_secs * SAMPLE_RATE as f64).round().max(1.0) as usize;
    if let Some(freq) = args.sine {
        spec.clean = CleanKind::Sine { freq, amplitude: 0.5 };
    }

    let (pairs, names): (Vec<SynthPair>, Vec<String>) = match (&args.clean, args.synth) {
        (Some(dir), _) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| CliError::Usage(format!("--clean {}: {e}", dir.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(CliError::Usage(format!("no .wav files in {}", dir.display())));
            }
            let pairs = files
                .par_iter()
                .enumerate()
                .map(|(i, f)| {
                    let clip = load_clip(f, None, args.resample)?;
                    mix_with_spec(&spec, i, clip).map_err(|e| data(f.display(), e))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let names = files
                .iter()
                .map(|f| f.file_name().unwrap().to_string_lossy().into_owned())
                .collect();
            (pairs, names)
        }
        (None, Some(n)) => {
            let pairs = synth_pairs(&spec, n).map_err(|e| CliError::Usage(e.to_string()))?;
            (pairs, (0..n).map(|i| format!("{i:05}.wav")).collect())
        }
        (None, None) => unreachable!("checked above"),
    };

    create_dir(&args.out.join("clean"))?;
    create_dir(&args.out.join("noisy"))?;
    let rows = pairs
        .par_iter()
        .zip(&names)
        .map(|(p, name)| {
            let clean = format!("clean/{name}");
            let noisy = format!("noisy/{name}");
            write_wav(&p.clean, &args.out.join(&clean)).map_err(|e| data(&clean, e))?;
            write_wav(&p.noisy, &args.out.join(&noisy)).map_err(|e| data(&noisy, e))?;
            Ok(ManifestRow {
                clean,
                noisy,
                snr: Some(p.snr_db),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let manifest = args.out.join("manifest.csv");
    Manifest::write(&manifest, &rows)?;
    println!("wrote {} pairs and {}", rows.len(), manifest.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_lists() {
        assert_eq!(parse_snr_list("0, 5,10").unwrap(), SnrList(vec![0.0, 5.0, 10.0]));
        assert_eq!(parse_snr_list("-2.5").unwrap(), SnrList(vec![-2.5]));
        assert!(parse_snr_list("garbage").is_err());
        assert!(parse_snr_list("1,,2").is_err());
        assert!(parse_snr_list("inf").is_err());
    }
}
