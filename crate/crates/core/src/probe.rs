//! Frame-level logistic-regression probe on raw features, used to gauge
//! how separable a synthetic dataset is without temporal context.

use ndarray::{Array1, Array2, Axis};

use crate::error::{LocoError, Result};
use crate::features::FeatureSequence;
use crate::metrics::roc_auc;
use crate::trainer::{adam_step, AdamConfig, AdamState};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    pub weight: Array1<f64>,
    pub bias: f64,
}

fn stack_frames(seqs: &[FeatureSequence]) -> Result<(Array2<f64>, Vec<u8>)> {
    let dim = seqs
        .first()
        .map(|s| s.dim())
        .ok_or_else(|| LocoError::InvalidInput("no sequences".into()))?;
    let n: usize = seqs.iter().map(|s| s.n_frames()).sum();
    let mut x = Array2::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for s in seqs {
        if s.dim() != dim {
            return Err(LocoError::ShapeMismatch(format!(
                "{} has {} channels, expected {dim}",
                s.id,
                s.dim()
            )));
        }
        x.slice_mut(ndarray::s![row..row + s.n_frames(), ..])
            .assign(&s.feats.mapv(f64::from));
        row += s.n_frames();
        labels.extend(s.frame_labels()?);
    }
    Ok((x, labels))
}

impl LinearProbe {
    /// Full-batch logistic regression on standardized frames, fit with Adam.
    pub fn fit(seqs: &[FeatureSequence], iterations: usize) -> Result<Self> {
        let (x, y) = stack_frames(seqs)?;
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 0.0 { 1.0 / s } else { 1.0 });
        let z = (&x - &mean) * &scale;
        let y = Array1::from_iter(y.iter().map(|&v| f64::from(v)));

        let dim = z.ncols();
        let mut theta = vec![0.0; dim + 1];
        let mut state = AdamState::new(dim + 1);
        let hyper = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        for _ in 0..iterations {
            let w = Array1::from_vec(theta[..dim].to_vec());
            let logits = z.dot(&w) + theta[dim];
            let resid = logits.mapv(|l| 1.0 / (1.0 + (-l).exp())) - &y;
            let gw = z.t().dot(&resid) / n;
            let mut grad = gw.to_vec();
            grad.push(resid.sum() / n);
            adam_step(&mut theta, &grad, &mut state, &hyper)?;
        }
        Ok(LinearProbe {
            mean,
            scale,
            weight: Array1::from_vec(theta[..dim].to_vec()),
            bias: theta[dim],
        })
    }

    pub fn scores(&self, feats: &Array2<f64>) -> Array1<f64> {
        ((feats - &self.mean) * &self.scale).dot(&self.weight) + self.bias
    }

    /// Frame AUC over every frame of `seqs`.
    pub fn auc(&self, seqs: &[FeatureSequence]) -> Result<f64> {
        let (x, y) = stack_frames(seqs)?;
        roc_auc(self.scores(&x).as_slice().expect("contiguous"), &y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{synth_sequences, SynthConfig};

    #[test]
    fn probe_separates_a_large_shift_and_not_a_null_one() {
        let strong = SynthConfig {
            n_utterances: 40,
            class_shift: 6.0,
            ..SynthConfig::default()
        };
        let seqs = synth_sequences(&strong).unwrap();
        let probe = LinearProbe::fit(&seqs, 200).unwrap();
        assert!(probe.auc(&seqs).unwrap() > 0.99);

        let null = SynthConfig {
            class_shift: 0.0,
            seed: 3,
            ..strong
        };
        let seqs = synth_sequences(&null).unwrap();
        let probe = LinearProbe::fit(&seqs, 200).unwrap();
        let auc = probe
            .auc(&synth_sequences(&SynthConfig { seed: 4, ..null }).unwrap())
            .unwrap();
        assert!((auc - 0.5).abs() < 0.06, "{auc}");
    }
}
