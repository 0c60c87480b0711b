//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc filter.

use super::{contract, AudioClip, AudioError};

/// Zero crossings of the sinc on each side of the centre tap.
const ZERO_CROSSINGS: f64 = 16.0;
const KAISER_BETA: f64 = 8.6;
/// Cutoff as a fraction of the lower of the two Nyquist frequencies.
const ROLLOFF: f64 = 0.9;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// One filter per output phase: taps applied to input samples
/// `base + first ..= base + first + taps.len() - 1`.
struct Phase {
    first: i64,
    taps: Vec<f64>,
}

fn design(up: u64, down: u64) -> Vec<Phase> {
    // Cutoff in cycles per input sample.
    let fc = 0.5 * (up as f64 / down as f64).min(1.0) * ROLLOFF;
    let half = ZERO_CROSSINGS / (2.0 * fc);
    let i0_beta = bessel_i0(KAISER_BETA);
    (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let first = (frac - half).ceil() as i64;
            let last = (frac + half).floor() as i64;
            let mut taps: Vec<f64> = (first..=last)
                .map(|m| {
                    let tau = frac - m as f64;
                    let r = tau / half;
                    let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0_beta;
                    2.0 * fc * sinc(2.0 * fc * tau) * w
                })
                .collect();
            let dc: f64 = taps.iter().sum();
            taps.iter_mut().for_each(|t| *t /= dc);
            Phase { first, taps }
        })
        .collect()
}

/// Output length is `round(len · target / source)`; samples outside the
/// input are treated as zero.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip, AudioError> {
    if clip.rate == target_rate && target_rate > 0 {
        return Ok(clip.clone());
    }
    let x: Vec<f64> = clip.samples.iter().map(|&v| v as f64).collect();
    let out = resample_f64(&x, clip.rate, target_rate)?;
    AudioClip::new(out.into_iter().map(|v| v as f32).collect(), target_rate)
}

/// [`resample`] on 64-bit samples, with no rounding of the output.
pub fn resample_f64(x: &[f64], source_rate: u32, target_rate: u32) -> Result<Vec<f64>, AudioError> {
    if source_rate == 0 || target_rate == 0 {
        return Err(contract("resample", "sample rates must be positive"));
    }
    if source_rate == target_rate {
        return Ok(x.to_vec());
    }
    let g = gcd(source_rate as u64, target_rate as u64);
    let (up, down) = (target_rate as u64 / g, source_rate as u64 / g);
    let n_in = x.len() as u64;
    let n_out = (n_in * up + down / 2) / down;
    let phases = design(up, down);
    let out = (0..n_out)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let phase = &phases[(pos % up) as usize];
            let start = base + phase.first;
            let mut acc = 0.0f64;
            for (k, &h) in phase.taps.iter().enumerate() {
                let m = start + k as i64;
                if m >= 0 && (m as u64) < n_in {
                    acc += h * x[m as usize];
                }
            }
            acc
        })
        .collect();
    Ok(out)
}
