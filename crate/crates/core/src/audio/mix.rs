//! Mixing clean speech with noise at a requested SNR.

use rand::Rng;

use super::{contract, AudioClip, AudioError};

/// Mean square in 64-bit accumulation.
pub fn mean_square(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / x.len() as f64
}

/// `10·log10(P_clean / P_{noisy − clean})` over the whole clip.
pub fn measure_snr(clean: &[f32], noisy: &[f32]) -> f64 {
    let noise: Vec<f32> = noisy.iter().zip(clean).map(|(&n, &c)| n - c).collect();
    10.0 * (mean_square(clean) / mean_square(&noise)).log10()
}

/// Noise of exactly `len` samples: cropped from, or cyclically tiled starting
/// at, an offset drawn from `rng`.
pub fn fit_noise<R: Rng>(noise: &[f32], len: usize, rng: &mut R) -> Vec<f32> {
    if noise.is_empty() {
        return Vec::new();
    }
    if noise.len() >= len {
        let start = rng.random_range(0..=noise.len() - len);
        noise[start..start + len].to_vec()
    } else {
        let start = rng.random_range(0..noise.len());
        (0..len).map(|i| noise[(start + i) % noise.len()]).collect()
    }
}

/// `clean + g·noise` with `g = sqrt(P_c/P_n)·10^(−snr/20)`, so the mixture has
/// the requested SNR over the full clip.
pub fn mix_at_snr<R: Rng>(
    clean: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    rng: &mut R,
) -> Result<AudioClip, AudioError> {
    if clean.rate != noise.rate {
        return Err(contract(
            "mix_at_snr",
            format!("sample rates differ: {} vs {}", clean.rate, noise.rate),
        ));
    }
    if !snr_db.is_finite() {
        return Err(contract("mix_at_snr", "SNR must be finite"));
    }
    let pc = mean_square(&clean.samples);
    if pc == 0.0 {
        return Err(AudioError::Degenerate("clean signal"));
    }
    let n = fit_noise(&noise.samples, clean.len(), rng);
    let pn = mean_square(&n);
    if pn == 0.0 {
        return Err(AudioError::Degenerate("noise signal"));
    }
    let g = (pc / pn).sqrt() * 10f64.powf(-snr_db / 20.0);
    let samples = clean
        .samples
        .iter()
        .zip(&n)
        .map(|(&c, &v)| (c as f64 + g * v as f64) as f32)
        .collect();
    AudioClip::new(samples, clean.rate)
}
