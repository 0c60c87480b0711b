//! Seeded synthetic clean/noisy pairs for desk-scale experiments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::segment::{segment, SegmentMode, SegmentSet};
use super::{contract, mix_at_snr, AudioClip, AudioError};

const PEAK_LIMIT: f32 = 0.99;
const BABBLE_VOICES: usize = 5;
/// Envelope level between syllables inside a phrase, relative to the peak.
const SYLLABLE_FLOOR: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseKind {
    White,
    /// Several overlapping speech-like voices.
    Babble,
    /// A recorded noise clip, cropped or tiled per pair.
    Recording(AudioClip),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CleanKind {
    /// Harmonic voiced bursts with a drifting pitch and syllable envelopes.
    Speech,
    /// A pure tone at a random phase.
    Sine { freq: f64, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    /// Cycled over pairs: pair `i` uses `snr_db[i % len]`.
    pub snr_db: Vec<f64>,
    pub seed: u64,
    pub noise: NoiseKind,
    pub clean: CleanKind,
    pub rate: u32,
    pub clip_len: usize,
}

impl MixSpec {
    pub fn new(snr_db: Vec<f64>, seed: u64, noise: NoiseKind) -> Self {
        MixSpec {
            snr_db,
            seed,
            noise,
            clean: CleanKind::Speech,
            rate: crate::model::SAMPLE_RATE,
            clip_len: crate::model::SAMPLE_RATE as usize * 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub clean: AudioClip,
    pub noisy: AudioClip,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPair {
    pub clean: SegmentSet,
    pub noisy: SegmentSet,
    pub snr_db: f64,
}

fn speech_like(len: usize, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let rate = rate as f64;
    let f0_base = rng.random_range(100.0..220.0);
    let drift_rate = rng.random_range(0.5..2.0);
    let drift_phase = rng.random_range(0.0..2.0 * PI);
    let harmonics = ((0.45 * rate / (f0_base * 1.2)) as usize).clamp(1, 20);
    let phases: Vec<f64> = (0..harmonics).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let formant = rng.random_range(400.0..900.0);

    // Phrases of connected syllables separated by silent pauses. Within a
    // phrase the envelope never drops below a floor, as in running speech.
    let mut envelope = vec![0.0f64; len];
    let mut t = (rng.random_range(0.0..0.1) * rate) as usize;
    while t < len {
        let syllables = rng.random_range(3..7);
        for _ in 0..syllables {
            let dur = (rng.random_range(0.12..0.3) * rate) as usize;
            let gap = (rng.random_range(0.02..0.06) * rate) as usize;
            let gain = rng.random_range(0.5..1.0);
            for k in 0..(dur + gap).min(len.saturating_sub(t)) {
                let shape = if k < dur {
                    (PI * k as f64 / dur as f64).sin().powi(2)
                } else {
                    0.0
                };
                envelope[t + k] = gain * (SYLLABLE_FLOOR + (1.0 - SYLLABLE_FLOOR) * shape);
            }
            t += dur + gap;
        }
        t += (rng.random_range(0.15..0.4) * rate) as usize;
    }

    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(len);
    for (n, &env) in envelope.iter().enumerate() {
        let f0 = f0_base * (1.0 + 0.15 * (2.0 * PI * drift_rate * n as f64 / rate + drift_phase).sin());
        phase += 2.0 * PI * f0 / rate;
        let mut v = 0.0;
        for (k, &p) in phases.iter().enumerate() {
            let h = (k + 1) as f64;
            if h * f0 >= 0.45 * rate {
                break;
            }
            let shape = 1.0 + 2.0 * (-((h * f0 - formant) / 300.0).powi(2)).exp();
            v += shape / h * (h * phase + p).sin();
        }
        out.push(env * v);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out.into_iter().map(|v| v as f32).collect()
}

fn clean_signal(kind: CleanKind, len: usize, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    match kind {
        CleanKind::Speech => speech_like(len, rate, rng),
        CleanKind::Sine { freq, amplitude } => {
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..len)
                .map(|n| (amplitude * (2.0 * PI * freq * n as f64 / rate as f64 + phase).sin()) as f32)
                .collect()
        }
    }
}

fn noise_signal(kind: &NoiseKind, len: usize, rate: u32, rng: &mut ChaCha8Rng) -> Result<AudioClip, AudioError> {
    let samples = match kind {
        NoiseKind::White => (0..len).map(|_| 0.1 * rng.sample::<f32, _>(StandardNormal)).collect(),
        NoiseKind::Babble => {
            let mut acc = vec![0.0f32; len];
            for _ in 0..BABBLE_VOICES {
                for (a, v) in acc.iter_mut().zip(speech_like(len, rate, rng)) {
                    *a += v;
                }
            }
            acc
        }
        NoiseKind::Recording(clip) => {
            if clip.rate != rate {
                return Err(contract(
                    "synth",
                    format!("noise recording is {} Hz, expected {rate} Hz", clip.rate),
                ));
            }
            return Ok(clip.clone());
        }
    };
    AudioClip::new(samples, rate)
}

fn pair_rng(spec: &MixSpec, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    rng
}

/// Mixes a given clean clip as pair `index` of `spec`: the noise, SNR and
/// crop offset come from that pair's random stream. Both signals are scaled
/// together if needed so that neither peaks above 0.99.
pub fn mix_with_spec(spec: &MixSpec, index: usize, clean: AudioClip) -> Result<SynthPair, AudioError> {
    let mut rng = pair_rng(spec, index);
    // Skip the part of the stream a generated clean signal would use, so
    // noise draws do not depend on how the clean signal was obtained.
    rng.set_word_pos(1 << 40);
    mix_from(spec, index, clean, &mut rng)
}

fn mix_from(spec: &MixSpec, index: usize, clean: AudioClip, rng: &mut ChaCha8Rng) -> Result<SynthPair, AudioError> {
    if spec.snr_db.is_empty() {
        return Err(contract("synth", "SNR list must be non-empty"));
    }
    if clean.rate != spec.rate {
        return Err(contract(
            "synth",
            format!("clean clip is {} Hz, expected {} Hz", clean.rate, spec.rate),
        ));
    }
    let snr_db = spec.snr_db[index % spec.snr_db.len()];
    let noise = noise_signal(&spec.noise, clean.len(), spec.rate, rng)?;
    let mut noisy = mix_at_snr(&clean, &noise, snr_db, rng)?;
    let mut clean = clean;
    let peak = noisy
        .samples
        .iter()
        .chain(&clean.samples)
        .fold(0.0f32, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        noisy.samples.iter_mut().for_each(|v| *v *= g);
        clean.samples.iter_mut().for_each(|v| *v *= g);
    }
    Ok(SynthPair { clean, noisy, snr_db })
}

fn make_pair(spec: &MixSpec, index: usize) -> Result<SynthPair, AudioError> {
    let mut rng = pair_rng(spec, index);
    let clean = AudioClip::new(clean_signal(spec.clean, spec.clip_len, spec.rate, &mut rng), spec.rate)?;
    mix_from(spec, index, clean, &mut rng)
}

/// `count` seeded pairs. Pair `i` draws from its own random stream, so the
/// result does not depend on evaluation order or thread count.
pub fn synth_pairs(spec: &MixSpec, count: usize) -> Result<Vec<SynthPair>, AudioError> {
    if count == 0 {
        return Err(contract("synth", "count must be at least 1"));
    }
    if spec.snr_db.is_empty() || spec.snr_db.iter().any(|s| !s.is_finite()) {
        return Err(contract("synth", "SNR list must be non-empty and finite"));
    }
    if spec.clip_len == 0 || spec.rate == 0 {
        return Err(contract("synth", "clip length and rate must be positive"));
    }
    (0..count).into_par_iter().map(|i| make_pair(spec, i)).collect()
}

/// Synthetic pairs cut into index-aligned clean/noisy segment sets.
pub fn synth_dataset(
    spec: &MixSpec,
    count: usize,
    segment_len: usize,
    mode: SegmentMode,
) -> Result<Vec<SegmentPair>, AudioError> {
    synth_pairs(spec, count)?
        .into_iter()
        .map(|p| {
            Ok(SegmentPair {
                clean: segment(&p.clean.samples, segment_len, mode)?,
                noisy: segment(&p.noisy.samples, segment_len, mode)?,
                snr_db: p.snr_db,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::mix::measure_snr;

    fn spec(noise: NoiseKind) -> MixSpec {
        MixSpec {
            clip_len: 8000,
            ..MixSpec::new(vec![0.0, 5.0, 10.0, 15.0], 11, noise)
        }
    }

    #[test]
    fn deterministic() {
        let s = spec(NoiseKind::Babble);
        assert_eq!(synth_pairs(&s, 3).unwrap(), synth_pairs(&s, 3).unwrap());
        let other = MixSpec { seed: 12, ..s.clone() };
        assert_ne!(synth_pairs(&s, 1).unwrap(), synth_pairs(&other, 1).unwrap());
    }

    #[test]
    fn requested_snr_holds() {
        for noise in [NoiseKind::White, NoiseKind::Babble] {
            let pairs = synth_pairs(&spec(noise), 6).unwrap();
            for (i, p) in pairs.iter().enumerate() {
                assert_eq!(p.snr_db, [0.0, 5.0, 10.0, 15.0][i % 4]);
                let got = measure_snr(&p.clean.samples, &p.noisy.samples);
                assert!((got - p.snr_db).abs() < 0.1, "{got} vs {}", p.snr_db);
                assert!(p.noisy.samples.iter().all(|v| v.abs() <= PEAK_LIMIT));
            }
        }
    }

    #[test]
    fn recording_noise_rate_must_match() {
        let rec = AudioClip::new(vec![0.1, -0.2, 0.3], 8000).unwrap();
        assert!(synth_pairs(&spec(NoiseKind::Recording(rec)), 1).is_err());
        let rec = AudioClip::new(vec![0.1, -0.2, 0.3], 16000).unwrap();
        assert!(synth_pairs(&spec(NoiseKind::Recording(rec)), 2).is_ok());
    }

    #[test]
    fn segment_sets_are_aligned() {
        let d = synth_dataset(&spec(NoiseKind::White), 2, 1024, SegmentMode::Train).unwrap();
        for p in &d {
            assert_eq!(p.clean.offsets, p.noisy.offsets);
            assert_eq!(p.clean.len(), p.noisy.len());
        }
    }

    #[test]
    fn given_clean_clip_is_mixed_deterministically() {
        let s = spec(NoiseKind::Babble);
        let clean = synth_pairs(&s, 1).unwrap().remove(0).clean;
        let a = mix_with_spec(&s, 3, clean.clone()).unwrap();
        assert_eq!(a, mix_with_spec(&s, 3, clean.clone()).unwrap());
        assert_eq!(a.snr_db, 15.0);
        assert!((measure_snr(&a.clean.samples, &a.noisy.samples) - 15.0).abs() < 0.1);
        let other_rate = AudioClip::new(clean.samples, 8000).unwrap();
        assert!(mix_with_spec(&s, 0, other_rate).is_err());
    }

    #[test]
    fn bad_specs() {
        assert!(synth_pairs(&spec(NoiseKind::White), 0).is_err());
        let mut s = spec(NoiseKind::White);
        s.snr_db.clear();
        assert!(synth_pairs(&s, 1).is_err());
    }
}
