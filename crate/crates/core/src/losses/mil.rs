use ndarray::{Array1, Array2};

use crate::error::{LocoError, Result};

/// Indices of the `min(k, T)` largest scores; ties go to the lower index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k.min(scores.len()));
    idx
}

/// Mean of the `min(k, T)` largest scores.
pub fn topk_pool(scores: &[f64], k: usize) -> Result<f64> {
    if scores.is_empty() {
        return Err(LocoError::InvalidInput("top-k pooling of an empty sequence".into()));
    }
    if k == 0 {
        return Err(LocoError::InvalidInput("top-k pooling needs k >= 1".into()));
    }
    let idx = topk_indices(scores, k);
    Ok(idx.iter().map(|&i| scores[i]).sum::<f64>() / idx.len() as f64)
}

/// Mean squared error between a class posterior and the one-hot target.
pub fn p2sgrad_mse(probs: &[f64], label: usize) -> Result<f64> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || (sum - 1.0).abs() > 1e-6 || probs.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
        return Err(LocoError::InvalidInput(format!(
            "{probs:?} is not a probability simplex"
        )));
    }
    if label >= probs.len() {
        return Err(LocoError::InvalidInput(format!(
            "label {label} out of {} classes",
            probs.len()
        )));
    }
    let c = probs.len() as f64;
    Ok(probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let target = if i == label { 1.0 } else { 0.0 };
            (p - target).powi(2)
        })
        .sum::<f64>()
        / c)
}

/// Fake-class column of the per-frame softmax of a `T x 2` logit matrix.
pub fn fake_probs(scores: &Array2<f64>) -> Array1<f64> {
    scores
        .rows()
        .into_iter()
        .map(|row| 1.0 / (1.0 + (row[0] - row[1]).exp()))
        .collect()
}

#[derive(Debug, Clone)]
pub struct MilTerms {
    pub temporal: f64,
    pub prompt: f64,
    pub grad_t: Array2<f64>,
    pub grad_p: Array2<f64>,
}

impl MilTerms {
    pub fn total(&self) -> f64 {
        self.temporal + self.prompt
    }
}

fn head_loss_with_grad(scores: &Array2<f64>, label: u8, k: usize) -> Result<(f64, Array2<f64>)> {
    if scores.ncols() != 2 || scores.nrows() == 0 {
        return Err(LocoError::ShapeMismatch(format!(
            "scores must be T x 2, got {:?}",
            scores.dim()
        )));
    }
    let probs = fake_probs(scores);
    let probs = probs.as_slice().expect("contiguous");
    let pooled = topk_pool(probs, k)?;
    let loss = p2sgrad_mse(&[1.0 - pooled, pooled], label as usize)?;

    // With two classes the loss is (pooled - Y)^2.
    let d_pooled = 2.0 * (pooled - label as f64);
    let idx = topk_indices(probs, k);
    let share = d_pooled / idx.len() as f64;
    let mut grad = Array2::zeros(scores.raw_dim());
    for i in idx {
        let p = probs[i];
        let d_logit = share * p * (1.0 - p);
        grad[[i, 1]] = d_logit;
        grad[[i, 0]] = -d_logit;
    }
    Ok((loss, grad))
}

/// `MSE(topk(S_t), Y) + MSE(topk(S_p), Y)` with gradients for both logit matrices.
pub fn mil_loss_with_grad(s_t: &Array2<f64>, s_p: &Array2<f64>, label: u8, k: usize) -> Result<MilTerms> {
    if s_t.dim() != s_p.dim() {
        return Err(LocoError::ShapeMismatch(format!("{:?} vs {:?}", s_t.dim(), s_p.dim())));
    }
    if label > 1 {
        return Err(LocoError::InvalidInput(format!(
            "utterance label {label} is not binary"
        )));
    }
    let (temporal, grad_t) = head_loss_with_grad(s_t, label, k)?;
    let (prompt, grad_p) = head_loss_with_grad(s_p, label, k)?;
    Ok(MilTerms {
        temporal,
        prompt,
        grad_t,
        grad_p,
    })
}

pub fn mil_loss(s_t: &Array2<f64>, s_p: &Array2<f64>, label: u8, k: usize) -> Result<f64> {
    Ok(mil_loss_with_grad(s_t, s_p, label, k)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn topk_hand_example() {
        assert!((topk_pool(&[0.9, 0.1, 0.8, 0.4], 2).unwrap() - 0.85).abs() < 1e-15);
    }

    #[test]
    fn topk_saturates_to_mean() {
        let s = [0.2, 0.4, 0.9];
        assert!((topk_pool(&s, 50).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn topk_constant_input() {
        for k in 1..6 {
            assert_eq!(topk_pool(&[0.3; 4], k).unwrap(), 0.3);
        }
    }

    #[test]
    fn topk_ties_prefer_lower_index() {
        assert_eq!(topk_indices(&[0.5, 0.7, 0.5, 0.5], 2), vec![1, 0]);
        assert!(topk_pool(&[], 1).is_err());
    }

    #[test]
    fn p2sgrad_examples() {
        assert_eq!(p2sgrad_mse(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert_eq!(p2sgrad_mse(&[0.5, 0.5], 0).unwrap(), 0.25);
        assert_eq!(p2sgrad_mse(&[0.5, 0.5], 1).unwrap(), 0.25);
        assert!((p2sgrad_mse(&[0.15, 0.85], 1).unwrap() - 0.0225).abs() < 1e-15);
        assert!(p2sgrad_mse(&[0.3, 0.3], 0).is_err());
    }

    #[test]
    fn confident_correct_heads_have_zero_loss() {
        let s = Array2::from_shape_fn((6, 2), |(_, c)| if c == 1 { 800.0 } else { -800.0 });
        assert_eq!(mil_loss(&s, &s, 1, 3).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_heads_give_equal_terms() {
        let s = Array2::from_shape_fn((5, 2), |(t, c)| (t as f64 * 0.7 - c as f64).sin());
        let terms = mil_loss_with_grad(&s, &s, 0, 2).unwrap();
        assert_eq!(terms.temporal, terms.prompt);
    }

    #[test]
    fn mil_is_composition_of_pool_and_mse() {
        let s_t = Array2::from_shape_fn((7, 2), |(t, c)| ((t * 3 + c) as f64).cos() * 2.0);
        let s_p = Array2::from_shape_fn((7, 2), |(t, c)| ((t + 5 * c) as f64).sin());
        let head = |s: &Array2<f64>| {
            let p: Vec<f64> = s
                .rows()
                .into_iter()
                .map(|r| r[1].exp() / (r[0].exp() + r[1].exp()))
                .collect();
            let y = topk_pool(&p, 3).unwrap();
            p2sgrad_mse(&[1.0 - y, y], 1).unwrap()
        };
        let expected = head(&s_t) + head(&s_p);
        assert!((mil_loss(&s_t, &s_p, 1, 3).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mil_gradient_matches_finite_differences() {
        let s_t = Array2::from_shape_fn((6, 2), |(t, c)| ((t * 7 + c * 3) as f64 * 0.37).sin() * 1.5);
        let s_p = Array2::from_shape_fn((6, 2), |(t, c)| ((t * 5 + c) as f64 * 0.91).cos());
        let terms = mil_loss_with_grad(&s_t, &s_p, 1, 3).unwrap();
        let h = 1e-6;
        for t in 0..6 {
            for c in 0..2 {
                let mut plus = s_t.clone();
                plus[[t, c]] += h;
                let mut minus = s_t.clone();
                minus[[t, c]] -= h;
                let fd = (mil_loss(&plus, &s_p, 1, 3).unwrap() - mil_loss(&minus, &s_p, 1, 3).unwrap()) / (2.0 * h);
                assert!((fd - terms.grad_t[[t, c]]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn topk_is_monotone(scores in proptest::collection::vec(0.0f64..1.0, 1..20), k in 1usize..10, bump in 0.0f64..0.5, which in 0usize..20) {
            let base = topk_pool(&scores, k).unwrap();
            let mut raised = scores.clone();
            let i = which % raised.len();
            raised[i] = (raised[i] + bump).min(1.0);
            prop_assert!(topk_pool(&raised, k).unwrap() >= base - 1e-15);
        }

        #[test]
        fn p2sgrad_is_bounded(y in 0.0f64..=1.0, label in 0usize..2) {
            let v = p2sgrad_mse(&[1.0 - y, y], label).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
