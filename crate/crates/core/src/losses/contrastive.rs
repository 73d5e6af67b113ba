use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{LocoError, Result};

/// Two frames of one utterance and whether their pseudo labels agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePair {
    pub i: usize,
    pub j: usize,
    pub similar: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub pairs: Vec<FramePair>,
    /// Set when only one pseudo class was present, so no dissimilar pairs exist.
    pub similar_only: bool,
}

/// Samples `r` pairs: half similar (rounded up) and half dissimilar when
/// both pseudo classes occur, otherwise all similar.
pub fn sample_pairs<R: Rng + ?Sized>(labels: &[u8], r: usize, rng: &mut R) -> Result<PairSample> {
    if labels.len() < 2 {
        return Err(LocoError::InvalidInput(
            "pair sampling needs at least two frames".into(),
        ));
    }
    if r == 0 {
        return Err(LocoError::InvalidInput("pair sampling needs r >= 1".into()));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] != 0).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == 0).collect();
    let both = !pos.is_empty() && !neg.is_empty();
    // Frames whose class has a second member to pair with.
    let pool: Vec<usize> = [&pos, &neg]
        .into_iter()
        .filter(|c| c.len() >= 2)
        .flat_map(|c| c.iter().copied())
        .collect();

    let n_similar = match (both, pool.is_empty()) {
        (false, _) => r,
        (true, true) => 0,
        (true, false) => r.div_ceil(2),
    };
    let mut pairs = Vec::with_capacity(r);
    for _ in 0..n_similar {
        let i = pool[rng.random_range(0..pool.len())];
        let class = if labels[i] != 0 { &pos } else { &neg };
        let mut j = class[rng.random_range(0..class.len() - 1)];
        if j == i {
            j = class[class.len() - 1];
        }
        pairs.push(FramePair { i, j, similar: true });
    }
    for _ in n_similar..r {
        let (a, b) = if rng.random_bool(0.5) {
            (&pos, &neg)
        } else {
            (&neg, &pos)
        };
        let i = a[rng.random_range(0..a.len())];
        let j = b[rng.random_range(0..b.len())];
        pairs.push(FramePair { i, j, similar: false });
    }
    Ok(PairSample {
        pairs,
        similar_only: !both,
    })
}

/// Cosine similarity; zero when either vector has zero norm.
pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

fn check_pairs(n: usize, pairs: &[FramePair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(LocoError::InvalidInput(
            "contrastive loss over an empty pair list".into(),
        ));
    }
    for p in pairs {
        if p.i == p.j || p.i >= n || p.j >= n {
            return Err(LocoError::InvalidInput(format!("invalid pair {p:?} for {n} frames")));
        }
    }
    Ok(())
}

/// Mean over pairs of `(1 - cos)^2` for similar pairs and `max(0, cos)^2`
/// for dissimilar ones, with the gradient w.r.t. the features.
pub fn scl_loss_with_grad(features: &Array2<f64>, pairs: &[FramePair]) -> Result<(f64, Array2<f64>)> {
    check_pairs(features.nrows(), pairs)?;
    let r = pairs.len() as f64;
    let mut total = 0.0;
    let mut grad = Array2::zeros(features.raw_dim());
    for pair in pairs {
        let (a, b) = (features.row(pair.i), features.row(pair.j));
        let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
        let sim = cosine_similarity(a, b);
        let (term, d_sim) = if pair.similar {
            ((1.0 - sim).powi(2), -2.0 * (1.0 - sim))
        } else {
            let m = sim.max(0.0);
            (m * m, 2.0 * m)
        };
        total += term;
        if na == 0.0 || nb == 0.0 || d_sim == 0.0 {
            continue;
        }
        let scale = d_sim / r;
        let d_a: Array1<f64> = (&b / (na * nb) - &a * (sim / (na * na))) * scale;
        let d_b: Array1<f64> = (&a / (na * nb) - &b * (sim / (nb * nb))) * scale;
        let mut row = grad.row_mut(pair.i);
        row += &d_a;
        let mut row = grad.row_mut(pair.j);
        row += &d_b;
    }
    Ok((total / r, grad))
}

pub fn scl_loss(features: &Array2<f64>, pairs: &[FramePair]) -> Result<f64> {
    Ok(scl_loss_with_grad(features, pairs)?.0)
}
