//! Temporal forgery-class activation sequence, threshold proposals and
//! pseudo-label rasterization.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{LocoError, Result};
use crate::features::{segments_to_frame_labels, Segment};
use crate::losses::fake_probs;

pub const DEFAULT_LAMBDA_A: f64 = 0.9;
pub const DEFAULT_THETA_F: f64 = 0.5;

/// Per-frame forgery probabilities of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct TFas {
    pub scores: Vec<f64>,
    pub fps: u32,
}

impl TFas {
    pub fn new(scores: Vec<f64>, fps: u32) -> Result<Self> {
        if fps == 0 {
            return Err(LocoError::InvalidInput("fps must be positive".into()));
        }
        if let Some(bad) = scores.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(LocoError::InvalidInput(format!("activation {bad} outside [0, 1]")));
        }
        Ok(TFas { scores, fps })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// A predicted forged region `(confidence, start_s, end_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64)", into = "(f64, f64, f64)")]
pub struct ForgeryProposal {
    pub confidence: f64,
    pub start: f64,
    pub end: f64,
}

impl From<(f64, f64, f64)> for ForgeryProposal {
    fn from((confidence, start, end): (f64, f64, f64)) -> Self {
        ForgeryProposal { confidence, start, end }
    }
}

impl From<ForgeryProposal> for (f64, f64, f64) {
    fn from(p: ForgeryProposal) -> Self {
        (p.confidence, p.start, p.end)
    }
}

impl ForgeryProposal {
    pub fn segment(&self) -> Segment {
        Segment::new(self.start, self.end)
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.confidence) && self.start >= 0.0 && self.start < self.end
    }
}

/// `lambda_a * softmax(S_t)[:, fake] + (1 - lambda_a) * softmax(S_p)[:, fake]`.
pub fn fuse_tfas(s_t: &Array2<f64>, s_p: &Array2<f64>, lambda_a: f64, fps: u32) -> Result<TFas> {
    if s_t.dim() != s_p.dim() || s_t.ncols() != 2 {
        return Err(LocoError::ShapeMismatch(format!(
            "head scores {:?} and {:?} must both be T x 2",
            s_t.dim(),
            s_p.dim()
        )));
    }
    if !(0.0..=1.0).contains(&lambda_a) {
        return Err(LocoError::InvalidInput(format!("lambda_a {lambda_a} outside [0, 1]")));
    }
    let a_t = fake_probs(s_t);
    let a_p = fake_probs(s_p);
    let scores = a_t
        .iter()
        .zip(a_p.iter())
        .map(|(&t, &p)| (lambda_a * t + (1.0 - lambda_a) * p).clamp(0.0, 1.0))
        .collect();
    TFas::new(scores, fps)
}

/// Maximal runs of frames with `a_t >= theta` become proposals scored by
/// the mean activation over the run, sorted by start.
pub fn gen_proposals(tfas: &TFas, theta: f64) -> Vec<ForgeryProposal> {
    let a = &tfas.scores;
    let mut out = Vec::new();
    let mut t = 0;
    while t < a.len() {
        if a[t] < theta {
            t += 1;
            continue;
        }
        let first = t;
        let mut sum = 0.0;
        while t < a.len() && a[t] >= theta {
            sum += a[t];
            t += 1;
        }
        let seg = Segment::from_frames(first, t, tfas.fps);
        out.push(ForgeryProposal {
            confidence: sum / (t - first) as f64,
            start: seg.start,
            end: seg.end,
        });
    }
    out
}

/// Union rasterization of proposals onto `n_frames` frames (half-open).
pub fn proposals_to_pseudo_labels(proposals: &[ForgeryProposal], n_frames: usize, fps: u32) -> Result<Vec<u8>> {
    let segments: Vec<Segment> = proposals.iter().map(ForgeryProposal::segment).collect();
    segments_to_frame_labels(&segments, n_frames, fps)
}

/// Joins proposals separated by at most `max_gap` seconds; the merged
/// confidence is the duration-weighted mean.
pub fn merge_close_proposals(proposals: &[ForgeryProposal], max_gap: f64) -> Vec<ForgeryProposal> {
    let mut sorted = proposals.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut out: Vec<ForgeryProposal> = Vec::with_capacity(sorted.len());
    for p in sorted {
        match out.last_mut() {
            Some(last) if p.start - last.end <= max_gap + 1e-12 => {
                let (wa, wb) = (last.end - last.start, p.end - p.start);
                last.confidence = (last.confidence * wa + p.confidence * wb) / (wa + wb);
                last.end = last.end.max(p.end);
            }
            _ => out.push(p),
        }
    }
    out
}

pub fn drop_short_proposals(proposals: &[ForgeryProposal], min_duration: f64) -> Vec<ForgeryProposal> {
    proposals
        .iter()
        .copied()
        .filter(|p| p.end - p.start >= min_duration - 1e-12)
        .collect()
}
