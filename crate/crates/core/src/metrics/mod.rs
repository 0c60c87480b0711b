//! Objective quality measures on clean/enhanced pairs.

pub mod report;
pub mod ssnr;
pub mod stoi;

use thiserror::Error;

pub use report::{MetricReport, MetricRow};
pub use ssnr::ssnr;
pub use stoi::stoi;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("length mismatch: clean has {clean} samples, enhanced has {enhanced}")]
    LengthMismatch { clean: usize, enhanced: usize },
    #[error("sample rates differ: {clean} Hz vs {enhanced} Hz")]
    RateMismatch { clean: u32, enhanced: u32 },
    #[error("degenerate signal: {0}")]
    Degenerate(String),
    #[error("signal too short: {frames} frames after silence removal, need {needed}")]
    SignalTooShort { frames: usize, needed: usize },
}

pub(crate) fn check_pair(clean: &[f32], enhanced: &[f32]) -> Result<(), MetricError> {
    if clean.len() != enhanced.len() {
        return Err(MetricError::LengthMismatch {
            clean: clean.len(),
            enhanced: enhanced.len(),
        });
    }
    Ok(())
}
