//! Training objectives and their gradients: top-K multiple-instance pooling
//! with a posterior MSE, the co-learning KL term, the pairwise semantic
//! contrastive term, and the two stage objectives that combine them.

mod colearn;
mod contrastive;
mod mil;

use serde::{Deserialize, Serialize};

use crate::error::{LocoError, Result};
use crate::model::{ForwardTrace, OutputGrads};

pub use colearn::{kl_colearn_loss, kl_colearn_with_grad, KlTerms};
pub use contrastive::{cosine_similarity, sample_pairs, scl_loss, scl_loss_with_grad, FramePair, PairSample};
pub use mil::{fake_probs, mil_loss, mil_loss_with_grad, p2sgrad_mse, topk_indices, topk_pool, MilTerms};

/// How the co-learning term treats the KL divergence between branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlMode {
    /// `exp(-KL(t||p)) + exp(-KL(p||t))`, minimized as written.
    #[default]
    AsWritten,
    /// `KL(t||p) + KL(p||t)`, minimized directly so the branches align.
    Aligning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub top_k: usize,
    pub lambda_kl: f64,
    pub lambda_scl: f64,
    /// Frame pairs sampled per utterance for the contrastive term.
    pub pairs_per_utterance: usize,
    /// 1 or 2.
    pub stage: u8,
    pub kl_mode: KlMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            top_k: 50,
            lambda_kl: 0.1,
            lambda_scl: 0.01,
            pairs_per_utterance: 64,
            stage: 1,
            kl_mode: KlMode::AsWritten,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(LocoError::InvalidConfig("top_k must be >= 1".into()));
        }
        if !(self.lambda_kl >= 0.0 && self.lambda_scl >= 0.0) {
            return Err(LocoError::InvalidConfig("loss weights must be >= 0".into()));
        }
        if self.pairs_per_utterance == 0 {
            return Err(LocoError::InvalidConfig("pairs_per_utterance must be >= 1".into()));
        }
        if !(1..=2).contains(&self.stage) {
            return Err(LocoError::InvalidConfig(format!(
                "stage must be 1 or 2, got {}",
                self.stage
            )));
        }
        Ok(())
    }
}

/// Loss value, its components and the gradients handed to the model.
#[derive(Debug, Clone)]
pub struct StageLoss {
    pub total: f64,
    pub mil: f64,
    pub kl: f64,
    pub scl: f64,
    pub grads: OutputGrads,
}

/// Stage 1: `L_MIL + lambda_kl * L_KL`.
/// Stage 2: adds `lambda_scl * L_SCL` over `pairs` on the temporal features.
pub fn stage_loss(trace: &ForwardTrace, label: u8, pairs: Option<&[FramePair]>, cfg: &LossConfig) -> Result<StageLoss> {
    cfg.validate()?;
    let mil = mil_loss_with_grad(&trace.s_t, &trace.s_p, label, cfg.top_k)?;
    let kl = kl_colearn_with_grad(&trace.f_t, &trace.f_p, cfg.kl_mode)?;

    let mut d_f_t = kl.grad_t * cfg.lambda_kl;
    let d_f_p = kl.grad_p * cfg.lambda_kl;
    let mut total = mil.total() + cfg.lambda_kl * kl.value;

    let mut scl = 0.0;
    if cfg.stage == 2 {
        let pairs = pairs.ok_or_else(|| LocoError::InvalidInput("stage 2 needs pseudo-label pairs".into()))?;
        let (value, grad) = scl_loss_with_grad(&trace.f_t, pairs)?;
        scl = value;
        total += cfg.lambda_scl * value;
        d_f_t.scaled_add(cfg.lambda_scl, &grad);
    }

    Ok(StageLoss {
        total,
        mil: mil.total(),
        kl: kl.value,
        scl,
        grads: OutputGrads {
            s_t: Some(mil.grad_t),
            s_p: Some(mil.grad_p),
            f_t: Some(d_f_t),
            f_p: Some(d_f_p),
        },
    })
}
