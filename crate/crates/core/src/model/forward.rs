use ndarray::{Array1, Array2, Axis};

use super::ops::{affine, conv_time, gelu, softmax_cols, softmax_rows};
use super::{AttentionAxis, Linear, ModelParams};
use crate::error::{LocoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Classifier on the temporal forgery features.
    Temporal,
    /// Classifier on the prompt-enhanced features.
    Prompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptClass {
    Real = 0,
    Fake = 1,
}

/// Intermediates of one residual block kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub act: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub f_rb: Array2<f64>,
    /// Temporal attention weights, same shape as `f_rb`.
    pub attention: Array2<f64>,
    pub f_t: Array2<f64>,
    pub prompt: Array1<f64>,
    pub f_p: Array2<f64>,
    pub s_t: Array2<f64>,
    pub s_p: Array2<f64>,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) pff_gated: Array2<f64>,
    pub(crate) pff_pre: Array2<f64>,
    pub(crate) pff_hidden: Array2<f64>,
}

impl ForwardTrace {
    pub fn n_frames(&self) -> usize {
        self.input.nrows()
    }
}

fn check_finite(name: &str, x: &Array2<f64>) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LocoError::NonFinite(name.to_string()))
    }
}

struct TfaOutput {
    blocks: Vec<BlockCache>,
    f_rb: Array2<f64>,
    attention: Array2<f64>,
    f_t: Array2<f64>,
}

fn tfa_cached(input: &Array2<f64>, params: &ModelParams) -> Result<TfaOutput> {
    let cfg = &params.config;
    if input.nrows() == 0 {
        return Err(LocoError::ShapeMismatch("input has no frames".into()));
    }
    if input.ncols() != cfg.input_dim {
        return Err(LocoError::ShapeMismatch(format!(
            "input has {} channels, model expects {}",
            input.ncols(),
            cfg.input_dim
        )));
    }
    let mut h = match &params.input_proj {
        Some(proj) => conv_time(input, &proj.weight) + &proj.bias,
        None => input.clone(),
    };
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let pre = conv_time(&h, &block.w1) + &block.b1;
        let act = pre.mapv(gelu);
        let next = &h + &affine(&act.view(), &block.w2, &block.b2);
        blocks.push(BlockCache { input: h, pre, act });
        h = next;
    }
    let f_rb = h;
    check_finite("residual block output", &f_rb)?;
    let attention = match cfg.attention_axis {
        AttentionAxis::Time => softmax_cols(&f_rb),
        AttentionAxis::Channel => softmax_rows(&f_rb),
    };
    let f_t = &f_rb * &attention;
    Ok(TfaOutput {
        blocks,
        f_rb,
        attention,
        f_t,
    })
}

/// Residual blocks followed by `F_rb * softmax(F_rb)`; returns `(F_rb, F_t)`.
pub fn tfa_forward(input: &Array2<f64>, params: &ModelParams) -> Result<(Array2<f64>, Array2<f64>)> {
    let out = tfa_cached(input, params)?;
    Ok((out.f_rb, out.f_t))
}

/// Mean of the context tokens and the chosen class token.
pub fn prompt_embed(params: &ModelParams, class: PromptClass) -> Array1<f64> {
    let n = params.context_tokens.nrows() as f64 + 1.0;
    let sum = params.context_tokens.sum_axis(Axis(0)) + params.class_tokens.row(class as usize);
    sum / n
}

struct PffOutput {
    gated: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    f_p: Array2<f64>,
}

fn pff_cached(f_t: &Array2<f64>, prompt: &Array1<f64>, params: &ModelParams) -> Result<PffOutput> {
    if f_t.ncols() != prompt.len() || prompt.len() != params.config.hidden_dim {
        return Err(LocoError::ShapeMismatch(format!(
            "features {}x{} vs prompt {} vs hidden {}",
            f_t.nrows(),
            f_t.ncols(),
            prompt.len(),
            params.config.hidden_dim
        )));
    }
    let gated = f_t * prompt;
    let pre = affine(&gated.view(), &params.ffn_in.weight, &params.ffn_in.bias);
    let hidden = pre.mapv(gelu);
    let f_p = affine(&hidden.view(), &params.ffn_out.weight, &params.ffn_out.bias) + prompt;
    Ok(PffOutput {
        gated,
        pre,
        hidden,
        f_p,
    })
}

/// `FFN(F_t * Prompt) + Prompt`, with the prompt broadcast over frames.
pub fn pff_forward(f_t: &Array2<f64>, prompt: &Array1<f64>, params: &ModelParams) -> Result<Array2<f64>> {
    Ok(pff_cached(f_t, prompt, params)?.f_p)
}

/// Raw two-class logits per frame.
pub fn classifier_forward(features: &Array2<f64>, params: &ModelParams, head: Head) -> Result<Array2<f64>> {
    let lin: &Linear = match head {
        Head::Temporal => &params.clf_t,
        Head::Prompt => &params.clf_p,
    };
    if features.ncols() != lin.weight.nrows() {
        return Err(LocoError::ShapeMismatch(format!(
            "classifier expects {} channels, got {}",
            lin.weight.nrows(),
            features.ncols()
        )));
    }
    Ok(affine(&features.view(), &lin.weight, &lin.bias))
}

pub fn model_forward(input: &Array2<f64>, params: &ModelParams) -> Result<ForwardTrace> {
    let tfa = tfa_cached(input, params)?;
    let prompt = prompt_embed(params, PromptClass::Fake);
    let pff = pff_cached(&tfa.f_t, &prompt, params)?;
    let s_t = classifier_forward(&tfa.f_t, params, Head::Temporal)?;
    let s_p = classifier_forward(&pff.f_p, params, Head::Prompt)?;
    check_finite("temporal scores", &s_t)?;
    check_finite("prompt scores", &s_p)?;
    Ok(ForwardTrace {
        input: input.clone(),
        f_rb: tfa.f_rb,
        attention: tfa.attention,
        f_t: tfa.f_t,
        prompt,
        f_p: pff.f_p,
        s_t,
        s_p,
        blocks: tfa.blocks,
        pff_gated: pff.gated,
        pff_pre: pff.pre,
        pff_hidden: pff.hidden,
    })
}
