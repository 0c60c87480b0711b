//! Segmental SNR.

use super::{check_pair, MetricError};

pub const SSNR_FLOOR: f64 = -10.0;
pub const SSNR_CEILING: f64 = 35.0;
const FRAME_SECS: f64 = 0.03;

/// Mean over 30 ms frames (hop of a quarter frame, no window) of
/// `10·log10(Σc² / Σ(c−e)²)`, each clamped to `[-10, 35]` dB. Frames with
/// zero clean energy are skipped. A signal shorter than one frame is scored
/// as a single frame.
pub fn ssnr(clean: &[f32], enhanced: &[f32], rate: u32) -> Result<f64, MetricError> {
    check_pair(clean, enhanced)?;
    let frame = ((FRAME_SECS * rate as f64).round() as usize).max(1);
    let hop = (frame / 4).max(1);
    let n = clean.len();
    let starts: Vec<usize> = if n < frame {
        vec![0]
    } else {
        (0..=(n - frame) / hop).map(|k| k * hop).collect()
    };
    let mut total = 0.0;
    let mut count = 0usize;
    for s in starts {
        let end = (s + frame).min(n);
        let (mut sig, mut err) = (0.0f64, 0.0f64);
        for (&c, &e) in clean[s..end].iter().zip(&enhanced[s..end]) {
            let (c, e) = (c as f64, e as f64);
            sig += c * c;
            err += (c - e) * (c - e);
        }
        if sig == 0.0 {
            continue;
        }
        let db = if err == 0.0 {
            SSNR_CEILING
        } else {
            (10.0 * (sig / err).log10()).clamp(SSNR_FLOOR, SSNR_CEILING)
        };
        total += db;
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::Degenerate(
            "clean signal has no energy in any frame".into(),
        ));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tone(n: usize) -> Vec<f32> {
        (0..n).map(|t| (0.5 * (t as f64 * 0.07).sin()) as f32).collect()
    }

    #[test]
    fn identical_is_ceiling() {
        let x = tone(16000);
        assert_eq!(ssnr(&x, &x, 16000).unwrap(), 35.0);
    }

    #[test]
    fn heavy_noise_is_floor() {
        let x = tone(4000);
        let e: Vec<f32> = x.iter().map(|v| -100.0 * v).collect();
        assert_eq!(ssnr(&x, &e, 16000).unwrap(), -10.0);
    }

    #[test]
    fn scaled_error_gives_known_db() {
        // e = c·(1 − 10^(−1/2)) makes c − e = c·10^(−1/2) in every frame: 10 dB.
        let x = tone(8000);
        let k = 1.0 - 10f64.powf(-0.5);
        let e: Vec<f32> = x.iter().map(|&v| (v as f64 * k) as f32).collect();
        assert!((ssnr(&x, &e, 16000).unwrap() - 10.0).abs() < 1e-3);
    }

    #[test]
    fn silent_frames_are_skipped() {
        let mut x = tone(4800);
        x.extend(vec![0.0; 4800]);
        let mut e = x.clone();
        e[9000] = 0.3;
        assert_eq!(ssnr(&x, &e, 16000).unwrap(), 35.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            ssnr(&[0.0; 10], &[0.0; 9], 16000),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ssnr(&[0.0; 1000], &[0.1; 1000], 16000),
            Err(MetricError::Degenerate(_))
        ));
    }

    #[test]
    fn short_signal_is_one_frame() {
        let x = [0.5f32, -0.5, 0.25];
        let e = [0.5f32, -0.5, 0.0];
        let expect = 10.0 * ((0.25 + 0.25 + 0.0625) / 0.0625f64).log10();
        assert!((ssnr(&x, &e, 16000).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn more_noise_never_raises_score() {
        let x = tone(8000);
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let n: Vec<f32> = (0..8000).map(|_| r.random::<f32>() - 0.5).collect();
        let mut last = f64::INFINITY;
        for g in [0.001f32, 0.01, 0.05, 0.1, 0.5, 1.0, 5.0] {
            let e: Vec<f32> = x.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            let s = ssnr(&x, &e, 16000).unwrap();
            assert!((SSNR_FLOOR..=SSNR_CEILING).contains(&s));
            assert!(s <= last);
            last = s;
        }
    }
}
