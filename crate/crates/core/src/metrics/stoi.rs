//! Short-time objective intelligibility.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{check_pair, MetricError};
use crate::audio::resample_f64;

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per short-time segment.
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

/// Hann window of length `n` without the zero end points.
fn hann(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Band index ranges `[lo, hi)` over the `NFFT/2 + 1` bins, edges snapped to
/// the nearest bin (first one on ties).
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins: Vec<f64> = (0..=NFFT / 2)
        .map(|k| k as f64 * STOI_RATE as f64 / NFFT as f64)
        .collect();
    let nearest = |f: f64| {
        let mut best = 0;
        for (k, &b) in bins.iter().enumerate() {
            if (b - f).powi(2) < (bins[best] - f).powi(2) {
                best = k;
            }
        }
        best
    };
    (0..BANDS)
        .map(|j| {
            let k = j as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Windowed frames starting at `0, hop, …` while `start < len − frame`.
fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames whose clean energy is more than the dynamic range below the
/// loudest clean frame, then overlap-adds the survivors.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann(FRAME);
    let frames = |s: &[f64]| -> Vec<Vec<f64>> {
        frame_starts(s.len())
            .map(|i| w.iter().zip(&s[i..i + FRAME]).map(|(a, b)| a * b).collect())
            .collect()
    };
    let (xf, yf) = (frames(x), frames(y));
    let energy: Vec<f64> = xf
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON).log10())
        .collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len()).filter(|&i| energy[i] > max - DYN_RANGE_DB).collect();
    let ola = |fr: &[Vec<f64>]| {
        if keep.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (keep.len() - 1) * HOP + FRAME];
        for (k, &i) in keep.iter().enumerate() {
            for (o, v) in out[k * HOP..k * HOP + FRAME].iter_mut().zip(&fr[i]) {
                *o += v;
            }
        }
        out
    };
    (ola(&xf), ola(&yf))
}

/// Third-octave band envelopes, `[band][frame]`.
fn band_envelopes(s: &[f64], bands: &[(usize, usize)], planner: &mut FftPlanner<f64>) -> Vec<Vec<f64>> {
    let fft = planner.plan_fft_forward(NFFT);
    let w = hann(FRAME);
    let mut out = vec![Vec::new(); bands.len()];
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for i in frame_starts(s.len()) {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(if k < FRAME { w[k] * s[i + k] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        for (band, &(lo, hi)) in out.iter_mut().zip(bands) {
            band.push(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Correlation of mean-removed vectors; 0 when either has no variance.
fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x - ma, y - mb);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// STOI of `enhanced` against `clean`, both at `rate` Hz (resampled to 10 kHz
/// internally).
pub fn stoi(clean: &[f32], enhanced: &[f32], rate: u32) -> Result<f64, MetricError> {
    check_pair(clean, enhanced)?;
    if clean.iter().all(|&v| v == 0.0) {
        return Err(MetricError::Degenerate("clean signal is silent".into()));
    }
    let to_10k = |s: &[f32]| -> Result<Vec<f64>, MetricError> {
        let x: Vec<f64> = s.iter().map(|&v| v as f64).collect();
        resample_f64(&x, rate, STOI_RATE).map_err(|e| MetricError::Degenerate(e.to_string()))
    };
    let (x, y) = remove_silent_frames(&to_10k(clean)?, &to_10k(enhanced)?);

    let bands = third_octave_bands();
    let mut planner = FftPlanner::new();
    let xb = band_envelopes(&x, &bands, &mut planner);
    let yb = band_envelopes(&y, &bands, &mut planner);
    let frames = xb[0].len();
    if frames < SEGMENT {
        return Err(MetricError::SignalTooShort {
            frames,
            needed: SEGMENT,
        });
    }
    let clip_factor = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for (xe, ye) in xb.iter().zip(&yb) {
            let xs = &xe[m - SEGMENT..m];
            let ys = &ye[m - SEGMENT..m];
            let ny = norm(ys);
            let scale = if ny > 0.0 { norm(xs) / ny } else { 0.0 };
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(&yv, &xv)| (yv * scale).min(xv * clip_factor))
                .collect();
            total += correlation(xs, &yp);
            count += 1;
        }
    }
    Ok(total / count as f64)
}
