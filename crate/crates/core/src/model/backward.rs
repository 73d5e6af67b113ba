use ndarray::{Array2, Axis};

use super::forward::ForwardTrace;
use super::ops::{conv_time_backward, gelu_grad, softmax_cols_backward, softmax_rows_backward};
use super::{AttentionAxis, ModelParams};
use crate::error::{LocoError, Result};

/// Loss gradients with respect to the outputs of [`model_forward`](super::model_forward).
/// `None` means the loss does not depend on that output.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub s_t: Option<Array2<f64>>,
    pub s_p: Option<Array2<f64>>,
    pub f_t: Option<Array2<f64>>,
    pub f_p: Option<Array2<f64>>,
}

fn check_shape(name: &str, grad: &Option<Array2<f64>>, rows: usize, cols: usize) -> Result<()> {
    match grad {
        Some(g) if g.dim() != (rows, cols) => Err(LocoError::ShapeMismatch(format!(
            "gradient for {name} is {:?}, expected ({rows}, {cols})",
            g.dim()
        ))),
        _ => Ok(()),
    }
}

/// Reverse pass through the whole model. The result has the parameter
/// layout of `params`; flatten it with [`ModelParams::to_flat`].
pub fn model_backward(trace: &ForwardTrace, params: &ModelParams, grads: &OutputGrads) -> Result<ModelParams> {
    let n = trace.n_frames();
    let h = params.config.hidden_dim;
    if trace.blocks.len() != params.blocks.len() || trace.f_t.ncols() != h {
        return Err(LocoError::ShapeMismatch(
            "trace was produced by a different model".into(),
        ));
    }
    check_shape("S_t", &grads.s_t, n, 2)?;
    check_shape("S_p", &grads.s_p, n, 2)?;
    check_shape("F_t", &grads.f_t, n, h)?;
    check_shape("F_p", &grads.f_p, n, h)?;

    let mut out = ModelParams::zeros(&params.config)?;
    let mut d_f_t = grads.f_t.clone().unwrap_or_else(|| Array2::zeros((n, h)));
    let mut d_f_p = grads.f_p.clone().unwrap_or_else(|| Array2::zeros((n, h)));

    if let Some(d_s_p) = &grads.s_p {
        out.clf_p.weight = trace.f_p.t().dot(d_s_p);
        out.clf_p.bias = d_s_p.sum_axis(Axis(0));
        d_f_p += &d_s_p.dot(&params.clf_p.weight.t());
    }
    if let Some(d_s_t) = &grads.s_t {
        out.clf_t.weight = trace.f_t.t().dot(d_s_t);
        out.clf_t.bias = d_s_t.sum_axis(Axis(0));
        d_f_t += &d_s_t.dot(&params.clf_t.weight.t());
    }

    // F_p = GELU((F_t * prompt) W_in + b_in) W_out + b_out + prompt
    out.ffn_out.weight = trace.pff_hidden.t().dot(&d_f_p);
    out.ffn_out.bias = d_f_p.sum_axis(Axis(0));
    let mut d_prompt = d_f_p.sum_axis(Axis(0));
    let mut d_pre = d_f_p.dot(&params.ffn_out.weight.t());
    d_pre.zip_mut_with(&trace.pff_pre, |g, &z| *g *= gelu_grad(z));
    out.ffn_in.weight = trace.pff_gated.t().dot(&d_pre);
    out.ffn_in.bias = d_pre.sum_axis(Axis(0));
    let d_gated = d_pre.dot(&params.ffn_in.weight.t());
    d_f_t += &(&d_gated * &trace.prompt);
    d_prompt += &(&d_gated * &trace.f_t).sum_axis(Axis(0));

    // Prompt is the mean of the context tokens and the fake class token.
    let share = d_prompt / (params.context_tokens.nrows() as f64 + 1.0);
    for mut row in out.context_tokens.rows_mut() {
        row.assign(&share);
    }
    out.class_tokens.row_mut(1).assign(&share);

    // F_t = F_rb * softmax(F_rb)
    let d_att = &d_f_t * &trace.f_rb;
    let mut d_h = &d_f_t * &trace.attention;
    d_h += &match params.config.attention_axis {
        AttentionAxis::Time => softmax_cols_backward(&trace.attention, &d_att),
        AttentionAxis::Channel => softmax_rows_backward(&trace.attention, &d_att),
    };

    for ((block, cache), grad) in params.blocks.iter().zip(&trace.blocks).zip(out.blocks.iter_mut()).rev() {
        grad.w2 = cache.act.t().dot(&d_h);
        grad.b2 = d_h.sum_axis(Axis(0));
        let mut d_pre = d_h.dot(&block.w2.t());
        d_pre.zip_mut_with(&cache.pre, |g, &z| *g *= gelu_grad(z));
        grad.b1 = d_pre.sum_axis(Axis(0));
        let (d_in, d_w1) = conv_time_backward(&cache.input, &block.w1, &d_pre);
        grad.w1 = d_w1;
        d_h += &d_in;
    }

    if let (Some(grad), Some(proj)) = (out.input_proj.as_mut(), params.input_proj.as_ref()) {
        grad.weight = conv_time_backward(&trace.input, &proj.weight, &d_h).1;
        grad.bias = d_h.sum_axis(Axis(0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{model_forward, ModelConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(axis: AttentionAxis) -> (ModelParams, Array2<f64>) {
        let cfg = ModelConfig {
            input_dim: 3,
            hidden_dim: 4,
            n_blocks: 2,
            proj_kernel: 3,
            block_kernel: 3,
            n_context_tokens: 2,
            attention_axis: axis,
            prompt_init_std: 0.5,
        };
        let params = ModelParams::init(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        (params, x)
    }

    /// Linear probe of every output: loss = sum(R_s * S_t) + ... with fixed R.
    fn probe_loss(params: &ModelParams, x: &Array2<f64>, r: &[Array2<f64>; 4]) -> f64 {
        let tr = model_forward(x, params).unwrap();
        (&tr.s_t * &r[0]).sum() + (&tr.s_p * &r[1]).sum() + (&tr.f_t * &r[2]).sum() + (&tr.f_p * &r[3]).sum()
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let (params, x) = setup(AttentionAxis::Time);
        let trace = model_forward(&x, &params).unwrap();
        let grads = OutputGrads {
            s_t: Some(Array2::zeros((6, 2))),
            s_p: Some(Array2::zeros((6, 2))),
            f_t: Some(Array2::zeros((6, 4))),
            f_p: Some(Array2::zeros((6, 4))),
        };
        let g = model_backward(&trace, &params, &grads).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temporal_head_only_leaves_prompt_classifier_untouched() {
        let (params, x) = setup(AttentionAxis::Time);
        let trace = model_forward(&x, &params).unwrap();
        let grads = OutputGrads {
            s_t: Some(Array2::ones((6, 2))),
            ..OutputGrads::default()
        };
        let flat = model_backward(&trace, &params, &grads).unwrap().to_flat();
        assert!(flat[params.clf_p_range()].iter().all(|&v| v == 0.0));
        assert!(flat.iter().any(|&v| v != 0.0));
    }

    fn check_all_coordinates(axis: AttentionAxis) {
        let (params, x) = setup(axis);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut rand_mat = |c: usize| Array2::from_shape_fn((6, c), |_| rng.random_range(-1.0..1.0));
        let r = [rand_mat(2), rand_mat(2), rand_mat(4), rand_mat(4)];
        let trace = model_forward(&x, &params).unwrap();
        let grads = OutputGrads {
            s_t: Some(r[0].clone()),
            s_p: Some(r[1].clone()),
            f_t: Some(r[2].clone()),
            f_p: Some(r[3].clone()),
        };
        let analytic = model_backward(&trace, &params, &grads).unwrap().to_flat();
        let base = params.to_flat();
        let step = 1e-5;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += step;
            let mut minus = base.clone();
            minus[i] -= step;
            let fp = probe_loss(&ModelParams::from_flat(&params.config, &plus).unwrap(), &x, &r);
            let fm = probe_loss(&ModelParams::from_flat(&params.config, &minus).unwrap(), &x, &r);
            let fd = (fp - fm) / (2.0 * step);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-5, "coordinate {i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_time_axis() {
        check_all_coordinates(AttentionAxis::Time);
    }

    #[test]
    fn gradient_matches_finite_differences_channel_axis() {
        check_all_coordinates(AttentionAxis::Channel);
    }
}
