//! Temporal localization metrics over dataset-pooled proposals.

use std::collections::BTreeMap;

use crate::features::Segment;
use crate::localize::ForgeryProposal;

/// Proposals per utterance id.
pub type ProposalSet = BTreeMap<String, Vec<ForgeryProposal>>;
/// Ground-truth segments per utterance id.
pub type GroundTruth = BTreeMap<String, Vec<Segment>>;

/// `|a ∩ b| / |a ∪ b|`, zero for disjoint segments.
pub fn temporal_iou(a: &Segment, b: &Segment) -> f64 {
    let inter = (a.end.min(b.end) - a.start.max(b.start)).max(0.0);
    let union = a.duration() + b.duration() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy matching in the given proposal order: each proposal takes the
/// unmatched ground truth with the highest IoU, if that IoU is `>= tau`.
/// Returns a true-positive flag per proposal.
fn greedy_match(order: &[&ForgeryProposal], gt: &[Segment], tau: f64) -> Vec<bool> {
    let mut used = vec![false; gt.len()];
    order
        .iter()
        .map(|p| {
            let seg = p.segment();
            let best = gt
                .iter()
                .enumerate()
                .filter(|(g, _)| !used[*g])
                .map(|(g, s)| (g, temporal_iou(&seg, s)))
                .fold(None, |best: Option<(usize, f64)>, (g, iou)| match best {
                    Some((_, b)) if b >= iou => best,
                    _ => Some((g, iou)),
                });
            match best {
                Some((g, iou)) if iou >= tau => {
                    used[g] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

fn by_confidence(a: &ForgeryProposal, b: &ForgeryProposal) -> std::cmp::Ordering {
    b.confidence.total_cmp(&a.confidence).then(a.start.total_cmp(&b.start))
}

/// Average precision at IoU threshold `tau`. Proposals from all utterances
/// are ranked together by confidence (ties: earlier start, then utterance
/// id) and matched greedily within their utterance; AP is the area under
/// the monotone precision envelope. With no ground truth at all, AP is 1
/// when there are also no proposals and 0 otherwise.
pub fn ap_at_iou(proposals: &ProposalSet, gt: &GroundTruth, tau: f64) -> f64 {
    let n_gt: usize = gt.values().map(Vec::len).sum();
    let mut ranked: Vec<(&str, &ForgeryProposal)> = proposals
        .iter()
        .flat_map(|(id, ps)| ps.iter().map(move |p| (id.as_str(), p)))
        .collect();
    if n_gt == 0 {
        return if ranked.is_empty() { 1.0 } else { 0.0 };
    }
    ranked.sort_by(|a, b| by_confidence(a.1, b.1).then(a.0.cmp(b.0)));

    let mut used: BTreeMap<&str, Vec<bool>> = gt.iter().map(|(id, s)| (id.as_str(), vec![false; s.len()])).collect();
    let mut tp_flags = Vec::with_capacity(ranked.len());
    for (id, p) in &ranked {
        let hit = match (gt.get(*id), used.get_mut(id)) {
            (Some(segs), Some(flags)) => {
                let seg = p.segment();
                let mut best: Option<(usize, f64)> = None;
                for (g, s) in segs.iter().enumerate() {
                    if flags[g] {
                        continue;
                    }
                    let iou = temporal_iou(&seg, s);
                    if best.is_none_or(|(_, b)| iou > b) {
                        best = Some((g, iou));
                    }
                }
                match best {
                    Some((g, iou)) if iou >= tau => {
                        flags[g] = true;
                        true
                    }
                    _ => false,
                }
            }
            _ => false,
        };
        tp_flags.push(hit);
    }

    let mut precision = Vec::with_capacity(tp_flags.len());
    let mut tp = 0usize;
    for (k, &hit) in tp_flags.iter().enumerate() {
        tp += usize::from(hit);
        precision.push(tp as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    tp_flags
        .iter()
        .zip(&precision)
        .filter(|(hit, _)| **hit)
        .map(|(_, p)| p)
        .sum::<f64>()
        / n_gt as f64
}

/// The nine IoU thresholds 0.1, 0.2, ..., 0.9.
pub fn default_iou_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// IoU grid 0.5, 0.55, ..., 0.95 used for average recall.
pub fn default_ar_iou_grid() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

pub const DEFAULT_AN_VALUES: [usize; 4] = [2, 5, 10, 20];

/// AP at each threshold, paired with the threshold.
pub fn ap_per_iou(proposals: &ProposalSet, gt: &GroundTruth, thresholds: &[f64]) -> Vec<(f64, f64)> {
    thresholds.iter().map(|&t| (t, ap_at_iou(proposals, gt, t))).collect()
}

/// Arithmetic mean of AP over `thresholds`.
pub fn mean_ap(proposals: &ProposalSet, gt: &GroundTruth, thresholds: &[f64]) -> f64 {
    if thresholds.is_empty() {
        return 0.0;
    }
    thresholds.iter().map(|&t| ap_at_iou(proposals, gt, t)).sum::<f64>() / thresholds.len() as f64
}

/// Recall when each utterance keeps its `an` most confident proposals,
/// averaged over `iou_grid`.
pub fn ar_at_an(proposals: &ProposalSet, gt: &GroundTruth, an: usize, iou_grid: &[f64]) -> f64 {
    let n_gt: usize = gt.values().map(Vec::len).sum();
    if n_gt == 0 || iou_grid.is_empty() {
        return 0.0;
    }
    let kept: Vec<(&Vec<Segment>, Vec<&ForgeryProposal>)> = gt
        .iter()
        .map(|(id, segs)| {
            let mut ps: Vec<&ForgeryProposal> = proposals.get(id).map(|v| v.iter().collect()).unwrap_or_default();
            ps.sort_by(|a, b| by_confidence(a, b));
            ps.truncate(an);
            (segs, ps)
        })
        .collect();
    let recall_sum: f64 = iou_grid
        .iter()
        .map(|&tau| {
            let matched: usize = kept
                .iter()
                .map(|(segs, ps)| greedy_match(ps, segs, tau).into_iter().filter(|&m| m).count())
                .sum();
            matched as f64 / n_gt as f64
        })
        .sum();
    recall_sum / iou_grid.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prop(c: f64, s: f64, e: f64) -> ForgeryProposal {
        ForgeryProposal {
            confidence: c,
            start: s,
            end: e,
        }
    }

    fn one(id: &str, props: Vec<ForgeryProposal>, segs: Vec<Segment>) -> (ProposalSet, GroundTruth) {
        (
            BTreeMap::from([(id.to_string(), props)]),
            BTreeMap::from([(id.to_string(), segs)]),
        )
    }

    #[test]
    fn iou_examples() {
        let a = Segment::new(0.0, 1.0);
        assert_eq!(temporal_iou(&a, &a), 1.0);
        assert_eq!(temporal_iou(&a, &Segment::new(2.0, 3.0)), 0.0);
        assert!((temporal_iou(&a, &Segment::new(0.5, 1.5)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn exact_match_has_unit_ap() {
        let (p, g) = one("u", vec![prop(0.9, 0.2, 0.6)], vec![Segment::new(0.2, 0.6)]);
        assert_eq!(ap_at_iou(&p, &g, 0.5), 1.0);
    }

    #[test]
    fn no_matches_give_zero_ap() {
        let (p, g) = one("u", vec![prop(0.9, 2.0, 3.0)], vec![Segment::new(0.2, 0.6)]);
        assert_eq!(ap_at_iou(&p, &g, 0.1), 0.0);
    }

    #[test]
    fn empty_ground_truth_conventions() {
        let g: GroundTruth = BTreeMap::from([("u".to_string(), vec![])]);
        assert_eq!(ap_at_iou(&ProposalSet::new(), &g, 0.5), 1.0);
        let (p, _) = one("u", vec![prop(0.5, 0.0, 1.0)], vec![]);
        assert_eq!(ap_at_iou(&p, &g, 0.5), 0.0);
    }

    #[test]
    fn mean_ap_of_single_threshold_is_ap() {
        let (p, g) = one(
            "u",
            vec![prop(0.9, 0.0, 1.0), prop(0.4, 1.2, 2.0)],
            vec![Segment::new(0.0, 0.8), Segment::new(1.0, 2.0)],
        );
        assert_eq!(mean_ap(&p, &g, &[0.7]), ap_at_iou(&p, &g, 0.7));
    }

    #[test]
    fn ar_hand_trace() {
        // Each proposal overlaps one GT with IoU 0.6.
        let (p, g) = one(
            "u",
            vec![prop(0.9, 0.0, 0.6), prop(0.8, 2.0, 2.6)],
            vec![Segment::new(0.0, 1.0), Segment::new(2.0, 3.0)],
        );
        assert!((temporal_iou(&p["u"][0].segment(), &g["u"][0]) - 0.6).abs() < 1e-12);
        assert_eq!(ar_at_an(&p, &g, 2, &[0.5]), 1.0);
        assert_eq!(ar_at_an(&p, &g, 1, &[0.5]), 0.5);
        assert_eq!(ar_at_an(&ProposalSet::new(), &g, 5, &[0.5]), 0.0);
        assert_eq!(ar_at_an(&p, &g, 100, &[0.5, 0.7]), ar_at_an(&p, &g, 2, &[0.5, 0.7]));
    }
}
