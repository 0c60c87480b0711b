//! 16-bit PCM WAV reading and writing.

use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use thiserror::Error;

use super::AudioClip;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported codec: {0} (only integer PCM is supported)")]
    UnsupportedCodec(String),
    #[error("unsupported bit depth: {0} (only 16-bit is supported)")]
    UnsupportedBitDepth(u16),
    #[error("{channels} channels found; select one channel explicitly")]
    Multichannel { channels: u16 },
    #[error("channel {selected} out of range for {channels}-channel file")]
    ChannelOutOfRange { selected: u16, channels: u16 },
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<hound::Error> for WavError {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => WavError::Io(io),
            hound::Error::Unsupported => WavError::UnsupportedCodec("unsupported format tag".into()),
            other => WavError::MalformedHeader(other.to_string()),
        }
    }
}

/// Integer sample `v` maps to `v / 32768`.
pub fn pcm_to_float(v: i16) -> f32 {
    v as f32 / 32768.0
}

/// Inverse of [`pcm_to_float`]: round to nearest, clamp to the i16 range.
pub fn float_to_pcm(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Reads a mono file; multi-channel input requires `channel`.
pub fn read_wav_from<R: Read>(reader: R, channel: Option<u16>) -> Result<AudioClip, WavError> {
    let wav = WavReader::new(reader)?;
    let spec = wav.spec();
    if spec.sample_format != SampleFormat::Int {
        return Err(WavError::UnsupportedCodec("IEEE float".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(WavError::UnsupportedBitDepth(spec.bits_per_sample));
    }
    let channels = spec.channels;
    let pick = match (channels, channel) {
        (1, None | Some(0)) => 0,
        (_, None) => return Err(WavError::Multichannel { channels }),
        (_, Some(c)) if c >= channels => return Err(WavError::ChannelOutOfRange { selected: c, channels }),
        (_, Some(c)) => c,
    };
    let mut samples = Vec::with_capacity(wav.len() as usize / channels as usize);
    for (i, s) in wav.into_samples::<i16>().enumerate() {
        let s = s?;
        if i % channels as usize == pick as usize {
            samples.push(pcm_to_float(s));
        }
    }
    AudioClip::new(samples, spec.sample_rate).map_err(|e| WavError::InvalidClip(e.to_string()))
}

pub fn read_wav(path: &Path, channel: Option<u16>) -> Result<AudioClip, WavError> {
    let file = std::fs::File::open(path)?;
    read_wav_from(std::io::BufReader::new(file), channel)
}

pub fn write_wav_to<W: Write + Seek>(clip: &AudioClip, writer: W) -> Result<(), WavError> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut w = WavWriter::new(writer, spec)?;
    for &x in &clip.samples {
        w.write_sample(float_to_pcm(x))?;
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav(clip: &AudioClip, path: &Path) -> Result<(), WavError> {
    let file = std::fs::File::create(path)?;
    write_wav_to(clip, std::io::BufWriter::new(file))
}
