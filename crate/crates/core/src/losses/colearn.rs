use ndarray::{Array2, Axis};

use super::KlMode;
use crate::error::{LocoError, Result};

/// Row-wise log-softmax.
fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

#[derive(Debug, Clone)]
pub struct KlTerms {
    pub value: f64,
    /// Frame-averaged `KL(softmax(F_t) || softmax(F_p))`.
    pub kl_tp: f64,
    pub kl_pt: f64,
    pub grad_t: Array2<f64>,
    pub grad_p: Array2<f64>,
}

/// Frame-averaged KL of row distributions and its gradients w.r.t. both logit matrices.
fn kl_rows(log_p: &Array2<f64>, log_q: &Array2<f64>) -> (f64, Array2<f64>, Array2<f64>) {
    let n = log_p.nrows() as f64;
    let p = log_p.mapv(f64::exp);
    let q = log_q.mapv(f64::exp);
    let diff = log_p - log_q;
    let per_row = (&p * &diff).sum_axis(Axis(1));
    let mut grad_p = &p * &(&diff - &per_row.view().insert_axis(Axis(1)));
    grad_p /= n;
    let grad_q = (&q - &p) / n;
    (per_row.sum() / n, grad_p, grad_q)
}

pub fn kl_colearn_with_grad(f_t: &Array2<f64>, f_p: &Array2<f64>, mode: KlMode) -> Result<KlTerms> {
    if f_t.dim() != f_p.dim() || f_t.nrows() == 0 {
        return Err(LocoError::ShapeMismatch(format!(
            "co-learning features {:?} vs {:?}",
            f_t.dim(),
            f_p.dim()
        )));
    }
    let log_t = log_softmax_rows(f_t);
    let log_p = log_softmax_rows(f_p);
    let (kl_tp, g_tp_t, g_tp_p) = kl_rows(&log_t, &log_p);
    let (kl_pt, g_pt_p, g_pt_t) = kl_rows(&log_p, &log_t);
    let (value, w_tp, w_pt) = match mode {
        KlMode::AsWritten => {
            let (a, b) = ((-kl_tp).exp(), (-kl_pt).exp());
            (a + b, -a, -b)
        }
        KlMode::Aligning => (kl_tp + kl_pt, 1.0, 1.0),
    };
    Ok(KlTerms {
        value,
        kl_tp,
        kl_pt,
        grad_t: g_tp_t * w_tp + g_pt_t * w_pt,
        grad_p: g_tp_p * w_tp + g_pt_p * w_pt,
    })
}

/// Co-learning term over per-frame feature distributions (softmax over channels).
pub fn kl_colearn_loss(f_t: &Array2<f64>, f_p: &Array2<f64>, mode: KlMode) -> Result<f64> {
    Ok(kl_colearn_with_grad(f_t, f_p, mode)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_features_give_two() {
        let f = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 * 0.3);
        assert!((kl_colearn_loss(&f, &f, KlMode::AsWritten).unwrap() - 2.0).abs() < 1e-15);
        assert!(kl_colearn_loss(&f, &f, KlMode::Aligning).unwrap().abs() < 1e-15);
    }

    #[test]
    fn two_class_example_matches_term_by_term_oracle() {
        // softmax([0, 0]) = (0.5, 0.5); softmax([ln .9, ln .1]) = (0.9, 0.1)
        let f_t = Array2::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        let f_p = Array2::from_shape_vec((1, 2), vec![0.9f64.ln(), 0.1f64.ln()]).unwrap();
        let kl_tp = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        let kl_pt = 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
        let expected = (-kl_tp).exp() + (-kl_pt).exp();
        let got = kl_colearn_loss(&f_t, &f_p, KlMode::AsWritten).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 1.292).abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f_t = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 5 + j * 2) as f64 * 0.77).sin());
        let f_p = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 3 + j) as f64 * 1.3).cos() * 2.0);
        for mode in [KlMode::AsWritten, KlMode::Aligning] {
            let terms = kl_colearn_with_grad(&f_t, &f_p, mode).unwrap();
            let h = 1e-6;
            for idx in [(0, 0), (1, 2), (2, 3)] {
                let mut a = f_t.clone();
                a[idx] += h;
                let mut b = f_t.clone();
                b[idx] -= h;
                let fd =
                    (kl_colearn_loss(&a, &f_p, mode).unwrap() - kl_colearn_loss(&b, &f_p, mode).unwrap()) / (2.0 * h);
                assert!((fd - terms.grad_t[idx]).abs() < 1e-8);
                let mut a = f_p.clone();
                a[idx] += h;
                let mut b = f_p.clone();
                b[idx] -= h;
                let fd =
                    (kl_colearn_loss(&f_t, &a, mode).unwrap() - kl_colearn_loss(&f_t, &b, mode).unwrap()) / (2.0 * h);
                assert!((fd - terms.grad_p[idx]).abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn bounded_and_symmetric(vals in proptest::collection::vec(-5.0f64..5.0, 12)) {
            let a = Array2::from_shape_vec((2, 3), vals[..6].to_vec()).unwrap();
            let b = Array2::from_shape_vec((2, 3), vals[6..].to_vec()).unwrap();
            let ab = kl_colearn_loss(&a, &b, KlMode::AsWritten).unwrap();
            let ba = kl_colearn_loss(&b, &a, KlMode::AsWritten).unwrap();
            prop_assert!(ab > 0.0 && ab <= 2.0 + 1e-12);
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
