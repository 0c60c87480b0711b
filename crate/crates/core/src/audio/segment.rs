//! Fixed-length windowing of clips and the inverse for evaluation mode.

use super::{contract, AudioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentMode {
    /// Hop `3L/4` (25% overlap).
    Train,
    /// Hop `L`, no overlap.
    Eval,
}

impl SegmentMode {
    pub fn hop(self, segment_len: usize) -> usize {
        match self {
            SegmentMode::Train => (3 * segment_len / 4).max(1),
            SegmentMode::Eval => segment_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    pub segments: Vec<Vec<f32>>,
    pub offsets: Vec<usize>,
    pub original_len: usize,
    pub segment_len: usize,
    pub mode: SegmentMode,
    /// Whether the last segment was zero-padded past the end of the clip.
    pub padded_tail: bool,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Cuts `samples` into windows of `segment_len`. A final partial window is
/// zero-padded and flagged.
pub fn segment(samples: &[f32], segment_len: usize, mode: SegmentMode) -> Result<SegmentSet, AudioError> {
    if samples.is_empty() {
        return Err(contract("segment", "clip is empty"));
    }
    if segment_len == 0 {
        return Err(contract("segment", "segment length must be positive"));
    }
    let hop = mode.hop(segment_len);
    let n = samples.len();
    let full = if n >= segment_len {
        (n - segment_len) / hop + 1
    } else {
        0
    };
    let mut offsets: Vec<usize> = (0..full).map(|k| k * hop).collect();
    let covered = offsets.last().map_or(0, |&o| o + segment_len);
    let padded_tail = covered < n;
    if padded_tail {
        offsets.push(full * hop);
    }
    let segments = offsets
        .iter()
        .map(|&o| {
            let mut seg = vec![0.0; segment_len];
            let end = (o + segment_len).min(n);
            seg[..end - o].copy_from_slice(&samples[o..end]);
            seg
        })
        .collect();
    Ok(SegmentSet {
        segments,
        offsets,
        original_len: n,
        segment_len,
        mode,
        padded_tail,
    })
}

/// Concatenates evaluation-mode segments and trims the padding.
pub fn reassemble(set: &SegmentSet) -> Result<Vec<f32>, AudioError> {
    if set.mode != SegmentMode::Eval {
        return Err(contract(
            "reassemble",
            "only non-overlapping (eval-mode) segments can be reassembled",
        ));
    }
    let mut out = Vec::with_capacity(set.segments.len() * set.segment_len);
    for seg in &set.segments {
        if seg.len() != set.segment_len {
            return Err(contract("reassemble", "segment length differs from the set's"));
        }
        out.extend_from_slice(seg);
    }
    if out.len() < set.original_len {
        return Err(contract("reassemble", "segments do not cover the original length"));
    }
    out.truncate(set.original_len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn train_mode_one_second() {
        let s = segment(&vec![0.1; 16000], 1024, SegmentMode::Train).unwrap();
        assert_eq!(s.len(), 21);
        assert!(s.padded_tail);
        assert!(s.offsets.windows(2).all(|w| w[1] - w[0] == 768));
        assert_eq!(s.offsets[20], 15360);
        assert!(s.segments[20][640..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_exact_division() {
        let s = segment(&vec![0.1; 2048], 1024, SegmentMode::Eval).unwrap();
        assert_eq!(s.len(), 2);
        assert!(!s.padded_tail);
    }

    #[test]
    fn short_clip_is_one_padded_segment() {
        let x: Vec<f32> = (0..100).map(|i| i as f32).collect();
        let s = segment(&x, 1024, SegmentMode::Eval).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.padded_tail);
        assert_eq!(reassemble(&s).unwrap(), x);
    }

    #[test]
    fn train_mode_cannot_reassemble() {
        let s = segment(&[0.5; 3000], 1024, SegmentMode::Train).unwrap();
        assert!(reassemble(&s).is_err());
    }

    #[test]
    fn empty_clip_is_rejected() {
        assert!(segment(&[], 1024, SegmentMode::Eval).is_err());
    }

    proptest! {
        #[test]
        fn eval_round_trip(x in prop::collection::vec(-1.0f32..1.0, 1..5000), l in 1usize..300) {
            let s = segment(&x, l, SegmentMode::Eval).unwrap();
            prop_assert!(s.segments.iter().all(|seg| seg.len() == l));
            prop_assert!(s.offsets.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(reassemble(&s).unwrap(), x);
        }

        #[test]
        fn train_mode_covers_every_sample(n in 1usize..10000) {
            let s = segment(&vec![1.0; n], 64, SegmentMode::Train).unwrap();
            let end = s.offsets.last().unwrap() + 64;
            prop_assert!(end >= n);
            prop_assert!(s.offsets.windows(2).all(|w| w[1] - w[0] == 48));
        }
    }
}
