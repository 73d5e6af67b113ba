//! Frame-level detection metrics. Positives are forged frames (label 1);
//! a frame is predicted forged when its score is `>=` the threshold.

use crate::error::{LocoError, Result};

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(LocoError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let positives = labels.iter().filter(|&&l| l != 0).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(LocoError::SingleClass { positives, negatives });
    }
    Ok((positives, negatives))
}

/// Area under the ROC curve via the Mann-Whitney U statistic; tied
/// scores contribute one half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (positives, negatives) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of mid-ranks (1-based) of the positive frames.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] != 0).count();
        rank_sum += mid * pos_in_group as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualErrorRate {
    pub rate: f64,
    pub threshold: f64,
}

/// Equal error rate, linearly interpolated between the two distinct-score
/// thresholds whose `FPR - FNR` brackets zero. When the crossing lies
/// beyond the highest score the reported threshold is that score.
pub fn eer(scores: &[f64], labels: &[u8]) -> Result<EqualErrorRate> {
    let (positives, negatives) = class_counts(scores, labels)?;
    let mut pairs: Vec<(f64, bool)> = scores.iter().zip(labels).map(|(&s, &l)| (s, l != 0)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep thresholds upward; `below_*` counts frames strictly below.
    let (p, n) = (positives as f64, negatives as f64);
    let mut below_pos = 0usize;
    let mut below_neg = 0usize;
    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, fpr, diff)
    let mut i = 0;
    loop {
        let threshold = if i < pairs.len() { pairs[i].0 } else { f64::INFINITY };
        let fpr = (negatives - below_neg) as f64 / n;
        let fnr = below_pos as f64 / p;
        let diff = fpr - fnr;
        if diff <= 0.0 {
            return Ok(match prev {
                Some((t0, fpr0, d0)) if diff < 0.0 => {
                    let alpha = d0 / (d0 - diff);
                    let thr = if threshold.is_finite() {
                        t0 + alpha * (threshold - t0)
                    } else {
                        t0
                    };
                    EqualErrorRate {
                        rate: fpr0 + alpha * (fpr - fpr0),
                        threshold: thr,
                    }
                }
                _ => EqualErrorRate {
                    rate: fpr,
                    threshold: if threshold.is_finite() {
                        threshold
                    } else {
                        pairs[pairs.len() - 1].0
                    },
                },
            });
        }
        prev = Some((threshold, fpr, diff));
        while i < pairs.len() && pairs[i].0 == threshold {
            if pairs[i].1 {
                below_pos += 1;
            } else {
                below_neg += 1;
            }
            i += 1;
        }
    }
}

/// Fraction of frames whose thresholded prediction equals the label.
pub fn frame_acc(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(LocoError::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &l)| (s >= threshold) == (l != 0))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}
