//! Frame-feature streams: the in-memory sequence type, the binary file
//! format, dataset manifests and the seeded synthetic generator.

mod format;
mod manifest;
mod synth;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{LocoError, Result};

pub use format::{load_features, read_features, write_features, FEATURE_MAGIC};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{synth_dataset, synth_sequences, SynthConfig};

/// Default frame rate: 20 ms hop.
pub const DEFAULT_FPS: u32 = 50;

/// Tolerance used when checking segment boundaries against the duration.
const TIME_EPS: f64 = 1e-9;

/// A half-open time span `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Self {
        Segment { start, end }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Segment covering frames `first..end_frame` at the given frame rate.
    pub fn from_frames(first: usize, end_frame: usize, fps: u32) -> Self {
        Segment {
            start: first as f64 / fps as f64,
            end: end_frame as f64 / fps as f64,
        }
    }

    /// Half-open frame range `[round(start*fps), round(end*fps))`.
    pub fn frame_range(&self, fps: u32) -> (usize, usize) {
        let fps = fps as f64;
        let lo = (self.start * fps).round().max(0.0) as usize;
        let hi = (self.end * fps).round().max(0.0) as usize;
        (lo, hi)
    }
}

/// One utterance: a `T x D` feature matrix with its weak label and, for
/// evaluation data, the forged segments.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub feats: Array2<f32>,
    pub utterance_label: u8,
    pub gt_segments: Vec<Segment>,
    pub fps: u32,
}

impl FeatureSequence {
    pub fn n_frames(&self) -> usize {
        self.feats.nrows()
    }

    pub fn dim(&self) -> usize {
        self.feats.ncols()
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 / self.fps as f64
    }

    /// Checks every structural invariant of the sequence.
    pub fn validate(&self) -> Result<()> {
        if self.n_frames() == 0 || self.dim() == 0 {
            return Err(LocoError::InvalidInput(format!(
                "{}: empty feature matrix {}x{}",
                self.id,
                self.n_frames(),
                self.dim()
            )));
        }
        if self.fps == 0 {
            return Err(LocoError::InvalidInput(format!("{}: fps must be positive", self.id)));
        }
        if self.utterance_label > 1 {
            return Err(LocoError::InvalidInput(format!(
                "{}: utterance label {} is not binary",
                self.id, self.utterance_label
            )));
        }
        if self.feats.iter().any(|v| !v.is_finite()) {
            return Err(LocoError::NonFinite(format!("features of {}", self.id)));
        }
        if (self.utterance_label == 1) != !self.gt_segments.is_empty() {
            return Err(LocoError::InvalidInput(format!(
                "{}: label {} inconsistent with {} ground-truth segments",
                self.id,
                self.utterance_label,
                self.gt_segments.len()
            )));
        }
        validate_segments(&self.gt_segments, self.duration())
    }

    /// Ground-truth frame labels under the half-open convention.
    pub fn frame_labels(&self) -> Result<Vec<u8>> {
        segments_to_frame_labels(&self.gt_segments, self.n_frames(), self.fps)
    }
}

/// Segments must be sorted, non-overlapping and inside `[0, duration]`.
pub fn validate_segments(segments: &[Segment], duration: f64) -> Result<()> {
    let mut prev_end = f64::NEG_INFINITY;
    for seg in segments {
        check_segment(seg, duration)?;
        if seg.start < prev_end - TIME_EPS {
            return Err(LocoError::InvalidInput(format!(
                "segments overlap or are unsorted at [{}, {})",
                seg.start, seg.end
            )));
        }
        prev_end = seg.end;
    }
    Ok(())
}

fn check_segment(seg: &Segment, duration: f64) -> Result<()> {
    let ok = seg.start.is_finite()
        && seg.end.is_finite()
        && seg.start >= -TIME_EPS
        && seg.start < seg.end
        && seg.end <= duration + TIME_EPS;
    if ok {
        Ok(())
    } else {
        Err(LocoError::SegmentOutOfRange {
            start: seg.start,
            end: seg.end,
            duration,
        })
    }
}

/// Rasterizes segments onto `n_frames` frames: frame `t` is 1 iff
/// `round(start*fps) <= t < round(end*fps)` for some segment.
pub fn segments_to_frame_labels(segments: &[Segment], n_frames: usize, fps: u32) -> Result<Vec<u8>> {
    if fps == 0 {
        return Err(LocoError::InvalidInput("fps must be positive".into()));
    }
    let duration = n_frames as f64 / fps as f64;
    let mut labels = vec![0u8; n_frames];
    for seg in segments {
        check_segment(seg, duration)?;
        let (lo, hi) = seg.frame_range(fps);
        for label in &mut labels[lo.min(n_frames)..hi.min(n_frames)] {
            *label = 1;
        }
    }
    Ok(labels)
}

/// Maximal runs of ones in a binary mask, as half-open segments.
pub fn frame_labels_to_segments(labels: &[u8], fps: u32) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == 0 {
            t += 1;
            continue;
        }
        let first = t;
        while t < labels.len() && labels[t] != 0 {
            t += 1;
        }
        out.push(Segment::from_frames(first, t, fps));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_segments_rasterize_to_zeros() {
        assert_eq!(segments_to_frame_labels(&[], 5, 50).unwrap(), vec![0; 5]);
    }

    #[test]
    fn rasterize_by_index_arithmetic() {
        let labels = segments_to_frame_labels(&[Segment::new(0.02, 0.06)], 5, 50).unwrap();
        assert_eq!(labels, vec![0, 1, 1, 0, 0]);
    }

    #[test]
    fn full_coverage_is_all_ones() {
        let labels = segments_to_frame_labels(&[Segment::new(0.0, 0.1)], 5, 50).unwrap();
        assert_eq!(labels, vec![1; 5]);
    }

    #[test]
    fn out_of_range_segment_is_rejected() {
        let err = segments_to_frame_labels(&[Segment::new(0.0, 0.2)], 5, 50).unwrap_err();
        assert!(matches!(err, LocoError::SegmentOutOfRange { .. }));
        assert!(segments_to_frame_labels(&[Segment::new(-0.1, 0.02)], 5, 50).is_err());
    }

    #[test]
    fn mask_to_segments_inverts_rasterization() {
        let mask = vec![1, 1, 0, 0, 1, 0, 1, 1];
        let segs = frame_labels_to_segments(&mask, 50);
        assert_eq!(segs.len(), 3);
        assert_eq!(segments_to_frame_labels(&segs, mask.len(), 50).unwrap(), mask);
    }

    #[test]
    fn label_must_agree_with_segments() {
        let seq = FeatureSequence {
            id: "a".into(),
            feats: Array2::zeros((4, 2)),
            utterance_label: 1,
            gt_segments: vec![],
            fps: 50,
        };
        assert!(seq.validate().is_err());
    }
}
