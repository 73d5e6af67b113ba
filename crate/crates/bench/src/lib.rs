//! Fixtures shared by the criterion benches.

use loco_core::features::{synth_sequences, SynthConfig};
use loco_core::localize::{gen_proposals, TFas};
use loco_core::metrics::{GroundTruth, ProposalSet};
use loco_core::model::{AttentionAxis, ModelConfig, ModelParams};
use ndarray::Array2;

/// The model shape used by the end-to-end benchmark.
pub fn bench_model() -> ModelParams {
    let cfg = ModelConfig {
        input_dim: 32,
        hidden_dim: 16,
        proj_kernel: 15,
        block_kernel: 9,
        attention_axis: AttentionAxis::Channel,
        ..ModelConfig::default()
    };
    ModelParams::init(&cfg, 0).expect("valid config")
}

/// One synthetic utterance of `n_frames` frames as f64 features.
pub fn utterance(n_frames: usize) -> Array2<f64> {
    let seqs = synth_sequences(&SynthConfig {
        n_utterances: 1,
        frames_range: (n_frames, n_frames),
        forgery_prob: 1.0,
        ..SynthConfig::default()
    })
    .expect("valid config");
    seqs[0].feats.mapv(f64::from)
}

/// Ground truth and noisy proposals for `n` synthetic utterances.
pub fn localization_fixture(n: usize) -> (ProposalSet, GroundTruth) {
    let seqs = synth_sequences(&SynthConfig {
        n_utterances: n,
        ..SynthConfig::default()
    })
    .expect("valid config");
    let mut proposals = ProposalSet::new();
    let mut gt = GroundTruth::new();
    for (i, s) in seqs.iter().enumerate() {
        let labels = s.frame_labels().expect("valid segments");
        // Deterministic jitter so proposals only partly overlap the truth.
        let scores = labels
            .iter()
            .enumerate()
            .map(|(t, &l)| {
                let wobble = (((t * 31 + i * 17) % 23) as f64) / 46.0;
                if l == 1 {
                    0.55 + wobble * 0.9
                } else {
                    wobble
                }
            })
            .collect();
        let tfas = TFas::new(scores, s.fps).expect("scores in [0, 1]");
        proposals.insert(s.id.clone(), gen_proposals(&tfas, 0.5));
        gt.insert(s.id.clone(), s.gt_segments.clone());
    }
    (proposals, gt)
}
