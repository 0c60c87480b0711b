pub mod enhance;
pub mod evaluate;
pub mod gradcheck;
pub mod mix;
pub mod train;

use std::path::Path;

use rhrnet_core::audio::{read_wav, resample, AudioClip};
use rhrnet_core::model::SAMPLE_RATE;

use crate::error::{data, CliError, CliResult};

/// Reads a WAV file at the model rate, resampling only when allowed.
pub fn load_clip(path: &Path, channel: Option<u16>, allow_resample: bool) -> CliResult<AudioClip> {
    let clip = read_wav(path, channel).map_err(|e| data(path.display(), e))?;
    if clip.is_empty() {
        return Err(data(path.display(), "no samples"));
    }
    if clip.rate == SAMPLE_RATE {
        return Ok(clip);
    }
    if !allow_resample {
        return Err(CliError::Data(format!(
            "{}: sample rate {} Hz, expected {SAMPLE_RATE} Hz (pass --resample to convert)",
            path.display(),
            clip.rate
        )));
    }
    resample(&clip, SAMPLE_RATE).map_err(|e| data(path.display(), e))
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| data(path.display(), e))
}
