//! WAV I/O, resampling, SNR mixing, segmentation and synthetic data.

pub mod mix;
pub mod resample;
pub mod segment;
pub mod synth;
pub mod wav;

use thiserror::Error;

pub use mix::{fit_noise, mean_square, measure_snr, mix_at_snr};
pub use resample::{resample, resample_f64};
pub use segment::{reassemble, segment, SegmentMode, SegmentSet};
pub use synth::{mix_with_spec, synth_dataset, synth_pairs, CleanKind, MixSpec, NoiseKind, SegmentPair, SynthPair};
pub use wav::{read_wav, write_wav, WavError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AudioError {
    #[error("{op}: {reason}")]
    Contract { op: &'static str, reason: String },
    #[error("{0}: signal is silent")]
    Degenerate(&'static str),
}

pub(crate) fn contract(op: &'static str, reason: impl Into<String>) -> AudioError {
    AudioError::Contract {
        op,
        reason: reason.into(),
    }
}

/// Mono samples, nominally in `[-1, 1]`, at `rate` Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, rate: u32) -> Result<Self, AudioError> {
        if rate == 0 {
            return Err(contract("clip", "sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(contract("clip", format!("non-finite sample at index {i}")));
        }
        Ok(AudioClip { samples, rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }
}
