//! Temporal forgery attention adapter, prompt embedding, prompt-enhanced
//! feature adapter and the two frame classifiers, with hand-written
//! reverse-mode gradients.

mod backward;
mod checkpoint;
mod forward;
mod ops;

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{LocoError, Result};

pub use backward::{model_backward, OutputGrads};
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader,
};
pub use forward::{
    classifier_forward, model_forward, pff_forward, prompt_embed, tfa_forward, ForwardTrace, Head, PromptClass,
};
pub use ops::{gelu, gelu_grad};

/// Axis the temporal attention softmax normalizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionAxis {
    /// Per channel, across frames.
    Time,
    /// Per frame, across channels.
    Channel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_blocks: usize,
    /// Temporal width of the input projection (odd); 1 is a per-frame map.
    pub proj_kernel: usize,
    /// Temporal width of the first layer in each residual block (odd).
    pub block_kernel: usize,
    pub n_context_tokens: usize,
    pub attention_axis: AttentionAxis,
    pub prompt_init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 32,
            hidden_dim: 64,
            n_blocks: 2,
            proj_kernel: 1,
            block_kernel: 1,
            n_context_tokens: 4,
            attention_axis: AttentionAxis::Time,
            prompt_init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return Err(LocoError::InvalidConfig("model dimensions must be positive".into()));
        }
        if self.block_kernel.is_multiple_of(2) || self.proj_kernel.is_multiple_of(2) {
            return Err(LocoError::InvalidConfig(
                "proj_kernel and block_kernel must be odd".into(),
            ));
        }
        if self.n_context_tokens == 0 {
            return Err(LocoError::InvalidConfig("need at least one context token".into()));
        }
        Ok(())
    }

    pub fn has_input_proj(&self) -> bool {
        self.input_dim != self.hidden_dim
    }
}

/// Affine map `x W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        Linear {
            weight: Array2::zeros((d_in, d_out)),
            bias: Array1::zeros(d_out),
        }
    }
}

/// Input projection `conv(x, W) + b` from D to D' channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `kernel x D x D'`; tap `j` reads frame `t + j - kernel/2`.
    pub weight: Array3<f64>,
    pub bias: Array1<f64>,
}

/// `h + GELU(conv(h, W1) + b1) W2 + b2`, where `conv` mixes `kernel`
/// neighbouring frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    /// `kernel x D' x D'`; tap `j` reads frame `t + j - kernel/2`.
    pub w1: Array3<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub input_proj: Option<Projection>,
    pub blocks: Vec<ResidualBlock>,
    pub clf_t: Linear,
    pub clf_p: Linear,
    /// `l x D'` learnable context tokens.
    pub context_tokens: Array2<f64>,
    /// Row 0 real, row 1 fake.
    pub class_tokens: Array2<f64>,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.input_dim, config.hidden_dim);
        Ok(ModelParams {
            config: config.clone(),
            input_proj: config.has_input_proj().then(|| Projection {
                weight: Array3::zeros((config.proj_kernel, d, h)),
                bias: Array1::zeros(h),
            }),
            blocks: (0..config.n_blocks)
                .map(|_| ResidualBlock {
                    w1: Array3::zeros((config.block_kernel, h, h)),
                    b1: Array1::zeros(h),
                    w2: Array2::zeros((h, h)),
                    b2: Array1::zeros(h),
                })
                .collect(),
            clf_t: Linear::zeros(h, 2),
            clf_p: Linear::zeros(h, 2),
            context_tokens: Array2::zeros((config.n_context_tokens, h)),
            class_tokens: Array2::zeros((2, h)),
            ffn_in: Linear::zeros(h, h),
            ffn_out: Linear::zeros(h, h),
        })
    }

    /// Scaled-normal initialization; biases start at zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |values: &mut [f64], std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            values.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        };
        let (d, h) = (config.input_dim as f64, config.hidden_dim as f64);
        let k = config.block_kernel as f64;
        if let Some(proj) = params.input_proj.as_mut() {
            fill(
                slice_mut(&mut proj.weight),
                (config.proj_kernel as f64 * d).recip().sqrt(),
            );
        }
        for block in &mut params.blocks {
            fill(slice_mut(&mut block.w1), (2.0 / (k * h)).sqrt());
            // Small residual branches keep the stacked blocks near identity.
            fill(slice_mut(&mut block.w2), 0.5 * h.recip().sqrt());
        }
        fill(slice_mut(&mut params.clf_t.weight), h.recip().sqrt());
        fill(slice_mut(&mut params.clf_p.weight), h.recip().sqrt());
        fill(slice_mut(&mut params.context_tokens), config.prompt_init_std);
        fill(slice_mut(&mut params.class_tokens), config.prompt_init_std);
        fill(slice_mut(&mut params.ffn_in.weight), h.recip().sqrt());
        fill(slice_mut(&mut params.ffn_out.weight), h.recip().sqrt());
        Ok(params)
    }

    /// Parameter tensors in flat-layout order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(proj) = &self.input_proj {
            out.push(slice(&proj.weight));
            out.push(slice(&proj.bias));
        }
        for block in &self.blocks {
            out.push(slice(&block.w1));
            out.push(slice(&block.b1));
            out.push(slice(&block.w2));
            out.push(slice(&block.b2));
        }
        for lin in [&self.clf_t, &self.clf_p] {
            out.push(slice(&lin.weight));
            out.push(slice(&lin.bias));
        }
        out.push(slice(&self.context_tokens));
        out.push(slice(&self.class_tokens));
        for lin in [&self.ffn_in, &self.ffn_out] {
            out.push(slice(&lin.weight));
            out.push(slice(&lin.bias));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(proj) = &mut self.input_proj {
            out.push(slice_mut(&mut proj.weight));
            out.push(slice_mut(&mut proj.bias));
        }
        for block in &mut self.blocks {
            out.push(slice_mut(&mut block.w1));
            out.push(slice_mut(&mut block.b1));
            out.push(slice_mut(&mut block.w2));
            out.push(slice_mut(&mut block.b2));
        }
        for lin in [&mut self.clf_t, &mut self.clf_p] {
            out.push(slice_mut(&mut lin.weight));
            out.push(slice_mut(&mut lin.bias));
        }
        out.push(slice_mut(&mut self.context_tokens));
        out.push(slice_mut(&mut self.class_tokens));
        for lin in [&mut self.ffn_in, &mut self.ffn_out] {
            out.push(slice_mut(&mut lin.weight));
            out.push(slice_mut(&mut lin.bias));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn from_flat(config: &ModelConfig, flat: &[f64]) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        params.assign_flat(flat)?;
        Ok(params)
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.n_params();
        if flat.len() != n {
            return Err(LocoError::ShapeMismatch(format!(
                "flat vector has {} entries, model needs {n}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Flat-layout ranges of the prompt-branch classifier weights and bias.
    pub fn clf_p_range(&self) -> std::ops::Range<usize> {
        let mut offset = 0;
        if let Some(proj) = &self.input_proj {
            offset += proj.weight.len() + proj.bias.len();
        }
        for b in &self.blocks {
            offset += b.w1.len() + b.b1.len() + b.w2.len() + b.b2.len();
        }
        offset += self.clf_t.weight.len() + self.clf_t.bias.len();
        offset..offset + self.clf_p.weight.len() + self.clf_p.bias.len()
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored in standard layout")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored in standard layout")
}
