//! Seeded synthetic partial-forgery feature streams.
//!
//! Real frames are `offset + drift_t + noise`, where `offset` is a
//! per-utterance constant and `drift_t` a slow AR(1) process in every
//! channel. Forged frames add `class_shift` along a fixed unit direction,
//! ramped in linearly over `boundary_blur` frames at each segment edge.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{write_features, DatasetManifest, FeatureSequence, ManifestEntry, Segment, Split, DEFAULT_FPS};
use crate::error::{LocoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_utterances: usize,
    /// Inclusive frame-count range.
    pub frames_range: (usize, usize),
    pub dim: usize,
    pub forgery_prob: f64,
    pub n_segments_range: (usize, usize),
    pub segment_len_range: (usize, usize),
    pub class_shift: f64,
    pub boundary_blur: usize,
    /// Per-channel standard deviation of the slow drift process.
    pub drift_scale: f64,
    /// AR(1) coefficient of the drift process.
    pub drift_corr: f64,
    /// Per-channel standard deviation of the per-utterance offset.
    pub offset_scale: f64,
    pub noise_scale: f64,
    pub fps: u32,
    pub split: Split,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_utterances: 100,
            frames_range: (200, 500),
            dim: 32,
            forgery_prob: 0.5,
            n_segments_range: (1, 3),
            segment_len_range: (40, 120),
            class_shift: 1.55,
            boundary_blur: 3,
            drift_scale: 0.2,
            drift_corr: 0.98,
            offset_scale: 0.1,
            noise_scale: 1.0,
            fps: DEFAULT_FPS,
            split: Split::Train,
            id_prefix: "utt".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(LocoError::InvalidConfig(msg.to_string()));
        let range_ok = |(lo, hi): (usize, usize)| lo <= hi;
        if self.n_utterances == 0 {
            return bad("n_utterances must be positive");
        }
        if !range_ok(self.frames_range) || self.frames_range.0 == 0 {
            return bad("frames_range must be a non-empty range of positive counts");
        }
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(0.0..=1.0).contains(&self.forgery_prob) {
            return bad("forgery_prob must lie in [0, 1]");
        }
        if !range_ok(self.n_segments_range) || self.n_segments_range.0 == 0 {
            return bad("n_segments_range must be a non-empty range starting at >= 1");
        }
        if !range_ok(self.segment_len_range) || self.segment_len_range.0 == 0 {
            return bad("segment_len_range must be a non-empty range of positive lengths");
        }
        if self.forgery_prob > 0.0 && self.segment_len_range.0 >= self.frames_range.0 {
            return bad("shortest utterance must exceed the shortest segment");
        }
        if !(0.0..1.0).contains(&self.drift_corr) {
            return bad("drift_corr must lie in [0, 1)");
        }
        for (name, v) in [
            ("class_shift", self.class_shift),
            ("drift_scale", self.drift_scale),
            ("offset_scale", self.offset_scale),
            ("noise_scale", self.noise_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(LocoError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if self.fps == 0 {
            return bad("fps must be positive");
        }
        Ok(())
    }
}

/// A generated utterance together with the mask used to inject the shift.
pub(crate) struct SynthUtterance {
    pub seq: FeatureSequence,
    #[cfg_attr(not(test), allow(dead_code))]
    pub forged_mask: Vec<u8>,
}

pub(crate) fn generate(cfg: &SynthConfig) -> Result<Vec<SynthUtterance>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let direction = 1.0 / (cfg.dim as f64).sqrt();
    (0..cfg.n_utterances)
        .map(|i| {
            let id = format!("{}{:05}", cfg.id_prefix, i);
            generate_one(cfg, id, direction, &mut rng)
        })
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn generate_one(cfg: &SynthConfig, id: String, direction: f64, rng: &mut ChaCha8Rng) -> Result<SynthUtterance> {
    let n_frames = rng.random_range(cfg.frames_range.0..=cfg.frames_range.1);
    let forged = rng.random_bool(cfg.forgery_prob);
    let runs = if forged {
        place_segments(cfg, n_frames, rng)
    } else {
        Vec::new()
    };

    let mut mask = vec![0u8; n_frames];
    let mut weight = vec![0.0f64; n_frames];
    for &(lo, hi) in &runs {
        for t in lo..hi {
            mask[t] = 1;
            let edge = (t - lo).min(hi - 1 - t);
            weight[t] = ((edge + 1) as f64 / (cfg.boundary_blur + 1) as f64).min(1.0);
        }
    }

    let offset: Vec<f64> = (0..cfg.dim).map(|_| cfg.offset_scale * normal(rng)).collect();
    let mut drift: Vec<f64> = (0..cfg.dim).map(|_| normal(rng)).collect();
    let innovation = (1.0 - cfg.drift_corr * cfg.drift_corr).sqrt();
    let mut feats = Array2::<f32>::zeros((n_frames, cfg.dim));
    for t in 0..n_frames {
        let shift = cfg.class_shift * weight[t] * direction;
        for (d, z) in drift.iter_mut().enumerate() {
            if t > 0 {
                *z = cfg.drift_corr * *z + innovation * normal(rng);
            }
            let v = offset[d] + cfg.drift_scale * *z + cfg.noise_scale * normal(rng) + shift;
            feats[[t, d]] = v as f32;
        }
    }

    let gt_segments = runs
        .iter()
        .map(|&(lo, hi)| Segment::from_frames(lo, hi, cfg.fps))
        .collect();
    let seq = FeatureSequence {
        id,
        feats,
        utterance_label: u8::from(!runs.is_empty()),
        gt_segments,
        fps: cfg.fps,
    };
    seq.validate()?;
    Ok(SynthUtterance { seq, forged_mask: mask })
}

/// Non-overlapping frame runs separated by at least one real frame.
fn place_segments(cfg: &SynthConfig, n_frames: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let wanted = rng.random_range(cfg.n_segments_range.0..=cfg.n_segments_range.1);
    let mut lens: Vec<usize> = (0..wanted)
        .map(|_| rng.random_range(cfg.segment_len_range.0..=cfg.segment_len_range.1))
        .collect();
    // Drop segments until they fit with one-frame gaps, then clip the last.
    while lens.len() > 1 && lens.iter().sum::<usize>() + lens.len() > n_frames {
        lens.pop();
    }
    if lens[0] >= n_frames {
        lens[0] = n_frames - 1;
    }
    let required = lens.iter().sum::<usize>() + lens.len() - 1;
    let slack = n_frames - required;
    let mut cuts: Vec<usize> = (0..lens.len()).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();

    let mut runs = Vec::with_capacity(lens.len());
    let mut cursor = 0;
    let mut used_slack = 0;
    for (k, (&len, &cut)) in lens.iter().zip(&cuts).enumerate() {
        cursor += cut - used_slack + usize::from(k > 0);
        used_slack = cut;
        runs.push((cursor, cursor + len));
        cursor += len;
    }
    runs
}

/// Generates the configured sequences in memory.
pub fn synth_sequences(cfg: &SynthConfig) -> Result<Vec<FeatureSequence>> {
    Ok(generate(cfg)?.into_iter().map(|u| u.seq).collect())
}

/// Writes one `<id>.feat` per utterance plus `manifest.json` into `out_dir`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let sequences = synth_sequences(cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| LocoError::io(out_dir, e))?;
    let mut manifest = DatasetManifest::new(cfg.split, out_dir);
    for seq in &sequences {
        let file = format!("{}.feat", seq.id);
        write_features(seq, out_dir.join(&file))?;
        manifest.entries.push(ManifestEntry {
            id: seq.id.clone(),
            path: file.into(),
            utterance_label: seq.utterance_label,
            gt_segments: seq.gt_segments.clone(),
            n_frames: seq.n_frames(),
            dim: seq.dim(),
            fps: seq.fps,
        });
    }
    manifest.write(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
