//! Two-stage training: a base model on the MIL + co-learning objective,
//! then progressive refinement with pseudo frame labels regenerated from
//! the previous epoch's model.

mod adam;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LocoError, Result};
use crate::localize::{gen_proposals, proposals_to_pseudo_labels, DEFAULT_LAMBDA_A, DEFAULT_THETA_F};
use crate::losses::{sample_pairs, stage_loss, FramePair, LossConfig};
use crate::metrics::EvalConfig;
use crate::model::{model_backward, model_forward, ModelConfig, ModelParams};
use crate::pipeline::{evaluate_model, infer_tfas, EvalExample, TrainingExample, TrainingSet};

pub use adam::{adam_step, AdamConfig, AdamState};

/// Validation metric used to pick the stage-1 model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    FrameAuc,
    /// Mean AP over the IoU thresholds, at `theta_f`.
    Map,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1_steps: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub loss: LossConfig,
    pub model: ModelConfig,
    /// Validation cadence (in steps) for stage-1 model selection; 0 = only at the end.
    pub eval_every: usize,
    pub stage1_selection: SelectionMetric,
    /// Periodic checkpoint cadence (in steps); 0 disables.
    pub checkpoint_every: usize,
    pub lambda_a: f64,
    pub theta_f: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_steps: 20_000,
            stage2_epochs: 15,
            batch_size: 2,
            adam: AdamConfig::default(),
            seed: 0,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            eval_every: 500,
            stage1_selection: SelectionMetric::FrameAuc,
            checkpoint_every: 0,
            lambda_a: DEFAULT_LAMBDA_A,
            theta_f: DEFAULT_THETA_F,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LocoError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate <= 0.0 {
            return Err(LocoError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(LocoError::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda_a) || !(self.theta_f > 0.0 && self.theta_f < 1.0) {
            return Err(LocoError::InvalidConfig(
                "lambda_a in [0,1] and theta_f in (0,1) required".into(),
            ));
        }
        self.model.validate()?;
        self.loss.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One row of the loss curve: batch means of each component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub mil: f64,
    pub kl: f64,
    pub scl: f64,
}

pub fn loss_curve_csv(curve: &[LossRecord]) -> String {
    let mut out = String::from("step,loss,L_MIL,L_KL,L_SCL\n");
    for r in curve {
        let _ = writeln!(out, "{},{},{},{},{}", r.step, r.loss, r.mil, r.kl, r.scl);
    }
    out
}

pub fn write_loss_curve(curve: &[LossRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, loss_curve_csv(curve)).map_err(|e| LocoError::io(path, e))
}

/// Observation points of a training run. All methods default to no-ops.
pub trait TrainHooks {
    fn on_checkpoint(&mut self, _step: usize, _params: &ModelParams) -> Result<()> {
        Ok(())
    }

    /// Pseudo labels regenerated at the start of stage-2 epoch `epoch`
    /// (1-based) from the model with fingerprint `source`.
    fn on_pseudo_labels(&mut self, _epoch: usize, _source: u64, _labels: &[Vec<u8>]) {}

    fn on_epoch_end(&mut self, _epoch: usize, _params: &ModelParams) {}
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Selected parameters (best validation score, or the final ones).
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub curve: Vec<LossRecord>,
    /// `(step or epoch, validation metric)` at every selection point.
    pub validation: Vec<(usize, f64)>,
    pub selected_at: Option<usize>,
}

/// FNV-1a over the bit patterns of the flat parameters.
pub fn params_fingerprint(params: &ModelParams) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for v in params.to_flat() {
        for b in v.to_bits().to_le_bytes() {
            hash ^= u64::from(b);
            hash = hash.wrapping_mul(0x0100_0000_01b3);
        }
    }
    hash
}

fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sequence of mini-batches over shuffled epochs of `n` items.
struct BatchStream {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut stream = BatchStream {
            order: (0..n).collect(),
            cursor: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        stream.reshuffle();
        stream
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.reshuffle();
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

fn check_training_set(train: &TrainingSet, cfg: &TrainConfig) -> Result<()> {
    if train.is_empty() {
        return Err(LocoError::InvalidInput("training set is empty".into()));
    }
    let fakes = train.examples.iter().filter(|e| e.utterance_label() == 1).count();
    if fakes == 0 || fakes == train.len() {
        return Err(LocoError::InvalidInput(format!(
            "training set needs both utterance classes, has {fakes} forged of {}",
            train.len()
        )));
    }
    if let Some(e) = train.examples.iter().find(|e| e.feats().ncols() != cfg.model.input_dim) {
        return Err(LocoError::ShapeMismatch(format!(
            "{} has {} channels, model expects {}",
            e.id(),
            e.feats().ncols(),
            cfg.model.input_dim
        )));
    }
    Ok(())
}

/// Mean loss components and mean flat gradient over a batch.
fn batch_gradient(
    params: &ModelParams,
    batch: &[(&TrainingExample, Option<Vec<FramePair>>)],
    loss_cfg: &LossConfig,
) -> Result<(LossRecord, Vec<f64>)> {
    let per_example: Vec<(LossRecord, Vec<f64>)> = batch
        .par_iter()
        .map(|(ex, pairs)| {
            let trace = model_forward(ex.feats(), params)?;
            let loss = stage_loss(&trace, ex.utterance_label(), pairs.as_deref(), loss_cfg)?;
            let grads = model_backward(&trace, params, &loss.grads)?;
            Ok((
                LossRecord {
                    step: 0,
                    loss: loss.total,
                    mil: loss.mil,
                    kl: loss.kl,
                    scl: loss.scl,
                },
                grads.to_flat(),
            ))
        })
        .collect::<Result<_>>()?;

    let scale = 1.0 / batch.len() as f64;
    let mut record = LossRecord {
        step: 0,
        loss: 0.0,
        mil: 0.0,
        kl: 0.0,
        scl: 0.0,
    };
    let mut grad = vec![0.0; params.n_params()];
    for (r, g) in &per_example {
        record.loss += r.loss * scale;
        record.mil += r.mil * scale;
        record.kl += r.kl * scale;
        record.scl += r.scl * scale;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v * scale;
        }
    }
    Ok((record, grad))
}

fn apply_update(params: &mut ModelParams, grad: &[f64], state: &mut AdamState, hyper: &AdamConfig) -> Result<()> {
    let mut flat = params.to_flat();
    adam_step(&mut flat, grad, state, hyper)?;
    params.assign_flat(&flat)
}

fn validation_score(params: &ModelParams, val: &[EvalExample], cfg: &TrainConfig) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let report = evaluate_model(params, val, cfg.lambda_a, cfg.theta_f, &EvalConfig::default())?;
    Ok(match cfg.stage1_selection {
        SelectionMetric::FrameAuc => report.auc,
        SelectionMetric::Map => Some(report.map),
    })
}

/// Stage 1: minimizes `L_MIL + lambda_kl * L_KL` from a fresh initialization.
/// Model selection uses `cfg.stage1_selection` on the validation set.
pub fn train_stage1(
    train: &TrainingSet,
    val: &[EvalExample],
    cfg: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_training_set(train, cfg)?;
    let loss_cfg = LossConfig {
        stage: 1,
        ..cfg.loss.clone()
    };
    let mut params = ModelParams::init(&cfg.model, cfg.seed)?;
    let mut state = AdamState::new(params.n_params());
    let mut batches = BatchStream::new(train.len(), derive_seed(cfg.seed, 1, 0));
    let mut curve = Vec::with_capacity(cfg.stage1_steps);
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for step in 0..cfg.stage1_steps {
        let batch: Vec<_> = batches
            .next_batch(cfg.batch_size)
            .into_iter()
            .map(|i| (&train.examples[i], None))
            .collect();
        let (mut record, grad) = batch_gradient(&params, &batch, &loss_cfg)?;
        record.step = step;
        curve.push(record);
        apply_update(&mut params, &grad, &mut state, &cfg.adam)?;

        let done = step + 1;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            hooks.on_checkpoint(done, &params)?;
        }
        let eval_due = done == cfg.stage1_steps || (cfg.eval_every > 0 && done % cfg.eval_every == 0);
        if eval_due {
            if let Some(score) = validation_score(&params, val, cfg)? {
                log::info!("stage 1 step {done}: loss {:.5}, validation {score:.4}", record.loss);
                validation.push((done, score));
                if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                    best = Some((score, done, params.clone()));
                }
            }
        }
    }

    let selected_at = best.as_ref().map(|b| b.1);
    Ok(TrainOutcome {
        params: best.map(|b| b.2).unwrap_or_else(|| params.clone()),
        final_params: params,
        curve,
        validation,
        selected_at,
    })
}

/// Pseudo frame labels for every training utterance from the current model.
pub fn regenerate_pseudo_labels(params: &ModelParams, train: &TrainingSet, cfg: &TrainConfig) -> Result<Vec<Vec<u8>>> {
    train
        .examples
        .par_iter()
        .map(|ex| {
            let tfas = infer_tfas(params, ex.feats(), cfg.lambda_a, ex.fps())?;
            let props = gen_proposals(&tfas, cfg.theta_f);
            proposals_to_pseudo_labels(&props, ex.n_frames(), ex.fps())
        })
        .collect()
}

/// Stage 2: each epoch regenerates pseudo labels with the current model,
/// then makes one pass over the training set on
/// `L_MIL + lambda_kl * L_KL + lambda_scl * L_SCL`. Model selection uses
/// validation mAP over the base model (epoch 0) and every epoch.
pub fn train_stage2(
    base: &ModelParams,
    train: &TrainingSet,
    val: &[EvalExample],
    cfg: &TrainConfig,
    hooks: &mut dyn TrainHooks,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if base.config != cfg.model {
        return Err(LocoError::ShapeMismatch(format!(
            "base checkpoint model {:?} differs from configured {:?}",
            base.config, cfg.model
        )));
    }
    check_training_set(train, cfg)?;
    let loss_cfg = LossConfig {
        stage: 2,
        ..cfg.loss.clone()
    };
    let mut params = base.clone();
    let mut state = AdamState::new(params.n_params());
    let mut curve = Vec::new();
    let mut validation = Vec::new();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut step = 0;

    // The base model competes too, so refinement never selects a model
    // that validates worse than where it started.
    if !val.is_empty() {
        let report = evaluate_model(&params, val, cfg.lambda_a, cfg.theta_f, &EvalConfig::default())?;
        validation.push((0, report.map));
        best = Some((report.map, 0, params.clone()));
    }

    for epoch in 1..=cfg.stage2_epochs {
        let source = params_fingerprint(&params);
        let pseudo = regenerate_pseudo_labels(&params, train, cfg)?;
        hooks.on_pseudo_labels(epoch, source, &pseudo);

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2, epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3 + epoch as u64, i as u64));
                    let sample = sample_pairs(&pseudo[i], loss_cfg.pairs_per_utterance, &mut rng)?;
                    Ok((&train.examples[i], Some(sample.pairs)))
                })
                .collect::<Result<Vec<_>>>()?;
            let (mut record, grad) = batch_gradient(&params, &batch, &loss_cfg)?;
            record.step = step;
            curve.push(record);
            apply_update(&mut params, &grad, &mut state, &cfg.adam)?;
            step += 1;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                hooks.on_checkpoint(step, &params)?;
            }
        }
        hooks.on_epoch_end(epoch, &params);

        if !val.is_empty() {
            let report = evaluate_model(&params, val, cfg.lambda_a, cfg.theta_f, &EvalConfig::default())?;
            log::info!("stage 2 epoch {epoch}: val mAP {:.4}", report.map);
            validation.push((epoch, report.map));
            if best.as_ref().is_none_or(|(b, _, _)| report.map > *b) {
                best = Some((report.map, epoch, params.clone()));
            }
        }
    }

    let selected_at = best.as_ref().map(|b| b.1);
    Ok(TrainOutcome {
        params: best.map(|b| b.2).unwrap_or_else(|| params.clone()),
        final_params: params,
        curve,
        validation,
        selected_at,
    })
}
