//! Frame-level detection metrics (EER, AUC, ACC) and temporal localization
//! metrics (AP@IoU, mAP, AR@AN).

mod detection;
mod localization;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use detection::{eer, frame_acc, roc_auc, EqualErrorRate};
pub use localization::{
    ap_at_iou, ap_per_iou, ar_at_an, default_ar_iou_grid, default_iou_thresholds, mean_ap, temporal_iou, GroundTruth,
    ProposalSet, DEFAULT_AN_VALUES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub an_values: Vec<usize>,
    pub ar_iou_grid: Vec<f64>,
    pub acc_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: default_iou_thresholds(),
            an_values: DEFAULT_AN_VALUES.to_vec(),
            ar_iou_grid: default_ar_iou_grid(),
            acc_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouAp {
    pub iou: f64,
    pub ap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnAr {
    pub an: usize,
    pub ar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub n_frames: usize,
    pub n_gt_segments: usize,
    pub n_proposals: usize,
}

/// Full evaluation summary. Frame metrics are `None` when no frame scores
/// were supplied or the frames hold a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub eer: Option<f64>,
    pub auc: Option<f64>,
    pub acc: Option<f64>,
    pub ap_per_iou: Vec<IouAp>,
    pub map: f64,
    pub ar_per_an: Vec<AnAr>,
    pub counts: EvalCounts,
}

impl EvalReport {
    /// AP at the given threshold, if it was evaluated.
    pub fn ap_at(&self, iou: f64) -> Option<f64> {
        self.ap_per_iou
            .iter()
            .find(|e| (e.iou - iou).abs() < 1e-9)
            .map(|e| e.ap)
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (name, v) in [("eer", self.eer), ("auc", self.auc), ("acc", self.acc)] {
            if let Some(v) = v {
                out.push_str(&format!("{name},{v}\n"));
            }
        }
        for e in &self.ap_per_iou {
            out.push_str(&format!("ap@{},{}\n", e.iou, e.ap));
        }
        out.push_str(&format!("map,{}\n", self.map));
        for e in &self.ar_per_an {
            out.push_str(&format!("ar@{},{}\n", e.an, e.ar));
        }
        out
    }
}

/// Pooled frame scores with their ground-truth frame labels.
pub struct FrameData<'a> {
    pub scores: &'a [f64],
    pub labels: &'a [u8],
}

pub fn evaluate(
    frames: Option<FrameData<'_>>,
    proposals: &ProposalSet,
    gt: &GroundTruth,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let (mut eer_v, mut auc_v, mut acc_v, mut n_frames) = (None, None, None, 0);
    if let Some(f) = frames {
        n_frames = f.scores.len();
        if n_frames > 0 {
            acc_v = Some(frame_acc(f.scores, f.labels, cfg.acc_threshold)?);
        }
        match (roc_auc(f.scores, f.labels), eer(f.scores, f.labels)) {
            (Ok(auc), Ok(e)) => {
                auc_v = Some(auc);
                eer_v = Some(e.rate);
            }
            (Err(crate::error::LocoError::SingleClass { .. }), _) => {}
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let ap: Vec<IouAp> = ap_per_iou(proposals, gt, &cfg.iou_thresholds)
        .into_iter()
        .map(|(iou, ap)| IouAp { iou, ap })
        .collect();
    let map = if ap.is_empty() {
        0.0
    } else {
        ap.iter().map(|e| e.ap).sum::<f64>() / ap.len() as f64
    };
    let ar_per_an = cfg
        .an_values
        .iter()
        .map(|&an| AnAr {
            an,
            ar: ar_at_an(proposals, gt, an, &cfg.ar_iou_grid),
        })
        .collect();
    Ok(EvalReport {
        eer: eer_v,
        auc: auc_v,
        acc: acc_v,
        ap_per_iou: ap,
        map,
        ar_per_an,
        counts: EvalCounts {
            n_frames,
            n_gt_segments: gt.values().map(Vec::len).sum(),
            n_proposals: proposals.values().map(Vec::len).sum(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Segment;
    use crate::localize::ForgeryProposal;
    use std::collections::BTreeMap;

    #[test]
    fn perfect_predictions_score_one() {
        let gt: GroundTruth = BTreeMap::from([("a".into(), vec![Segment::new(0.1, 0.5)]), ("b".into(), vec![])]);
        let props: ProposalSet = BTreeMap::from([(
            "a".into(),
            vec![ForgeryProposal {
                confidence: 1.0,
                start: 0.1,
                end: 0.5,
            }],
        )]);
        let scores = [0.1, 0.9, 0.8, 0.2];
        let labels = [0, 1, 1, 0];
        let r = evaluate(
            Some(FrameData {
                scores: &scores,
                labels: &labels,
            }),
            &props,
            &gt,
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(r.map, 1.0);
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.eer, Some(0.0));
        assert!(r.ar_per_an.iter().all(|e| e.ar == 1.0));
        let mean = r.ap_per_iou.iter().map(|e| e.ap).sum::<f64>() / 9.0;
        assert!((r.map - mean).abs() < 1e-12);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let gt: GroundTruth = BTreeMap::from([("a".into(), vec![Segment::new(0.1, 0.5)])]);
        let r = evaluate(None, &ProposalSet::new(), &gt, &EvalConfig::default()).unwrap();
        assert_eq!(r.map, 0.0);
        assert!(r.ar_per_an.iter().all(|e| e.ar == 0.0));
        assert!(r.auc.is_none());
    }
}
