//! Datasets as seen by training and evaluation, batch inference and the
//! proposal / frame-score file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LocoError, Result};
use crate::features::{FeatureSequence, Segment};
use crate::localize::{fuse_tfas, gen_proposals, ForgeryProposal, TFas};
use crate::metrics::{evaluate, EvalConfig, EvalReport, FrameData, GroundTruth, ProposalSet};
use crate::model::{model_forward, ForwardTrace, ModelParams};

/// Counts reads of ground truth through [`TrainingExample::ground_truth`].
#[derive(Debug, Clone, Default)]
pub struct GtAudit(Arc<AtomicUsize>);

impl GtAudit {
    pub fn reads(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    fn record(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// A training utterance. Only the features and the utterance label are
/// freely readable; segment annotations go through an audited accessor.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    id: String,
    feats: Array2<f64>,
    label: u8,
    fps: u32,
    gt_segments: Vec<Segment>,
    audit: GtAudit,
}

impl TrainingExample {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn feats(&self) -> &Array2<f64> {
        &self.feats
    }

    pub fn utterance_label(&self) -> u8 {
        self.label
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn n_frames(&self) -> usize {
        self.feats.nrows()
    }

    pub fn ground_truth(&self) -> &[Segment] {
        self.audit.record();
        &self.gt_segments
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub examples: Vec<TrainingExample>,
    audit: GtAudit,
}

impl TrainingSet {
    pub fn from_sequences(seqs: &[FeatureSequence]) -> Self {
        let audit = GtAudit::default();
        let examples = seqs
            .iter()
            .map(|s| TrainingExample {
                id: s.id.clone(),
                feats: s.feats.mapv(f64::from),
                label: s.utterance_label,
                fps: s.fps,
                gt_segments: s.gt_segments.clone(),
                audit: audit.clone(),
            })
            .collect();
        TrainingSet { examples, audit }
    }

    pub fn audit(&self) -> &GtAudit {
        &self.audit
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// An evaluation utterance with full annotations.
#[derive(Debug, Clone)]
pub struct EvalExample {
    pub id: String,
    pub feats: Array2<f64>,
    pub fps: u32,
    pub gt_segments: Vec<Segment>,
    pub frame_labels: Vec<u8>,
}

pub fn eval_set(seqs: &[FeatureSequence]) -> Result<Vec<EvalExample>> {
    seqs.iter()
        .map(|s| {
            Ok(EvalExample {
                id: s.id.clone(),
                feats: s.feats.mapv(f64::from),
                fps: s.fps,
                gt_segments: s.gt_segments.clone(),
                frame_labels: s.frame_labels()?,
            })
        })
        .collect()
}

pub fn ground_truth(examples: &[EvalExample]) -> GroundTruth {
    examples.iter().map(|e| (e.id.clone(), e.gt_segments.clone())).collect()
}

/// Forward pass plus head fusion for one utterance.
pub fn infer_tfas(params: &ModelParams, feats: &Array2<f64>, lambda_a: f64, fps: u32) -> Result<TFas> {
    let trace: ForwardTrace = model_forward(feats, params)?;
    fuse_tfas(&trace.s_t, &trace.s_p, lambda_a, fps)
}

/// T-FAS of every utterance, keyed by id.
pub fn infer_all<'a, I>(params: &ModelParams, items: I, lambda_a: f64) -> Result<BTreeMap<String, TFas>>
where
    I: IntoParallelIterator<Item = (&'a str, &'a Array2<f64>, u32)>,
{
    items
        .into_par_iter()
        .map(|(id, feats, fps)| Ok((id.to_string(), infer_tfas(params, feats, lambda_a, fps)?)))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().collect())
}

pub fn proposals_at(scores: &BTreeMap<String, TFas>, theta: f64) -> ProposalSet {
    scores
        .iter()
        .map(|(id, tfas)| (id.clone(), gen_proposals(tfas, theta)))
        .collect()
}

/// Evaluates the model on annotated utterances at proposal threshold `theta`.
pub fn evaluate_model(
    params: &ModelParams,
    examples: &[EvalExample],
    lambda_a: f64,
    theta: f64,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let scores = infer_all(
        params,
        examples
            .par_iter()
            .map(|e| (e.id.as_str(), &e.feats, e.fps))
            .collect::<Vec<_>>(),
        lambda_a,
    )?;
    evaluate_scores(&scores, examples, theta, cfg)
}

pub fn evaluate_scores(
    scores: &BTreeMap<String, TFas>,
    examples: &[EvalExample],
    theta: f64,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let mut flat_scores = Vec::new();
    let mut flat_labels = Vec::new();
    for e in examples {
        let tfas = scores
            .get(&e.id)
            .ok_or_else(|| LocoError::InvalidInput(format!("no scores for {}", e.id)))?;
        if tfas.len() != e.frame_labels.len() {
            return Err(LocoError::ShapeMismatch(format!(
                "{}: {} scores for {} frames",
                e.id,
                tfas.len(),
                e.frame_labels.len()
            )));
        }
        flat_scores.extend_from_slice(&tfas.scores);
        flat_labels.extend_from_slice(&e.frame_labels);
    }
    let proposals = proposals_at(scores, theta);
    evaluate(
        Some(FrameData {
            scores: &flat_scores,
            labels: &flat_labels,
        }),
        &proposals,
        &ground_truth(examples),
        cfg,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProposalLine {
    id: String,
    proposals: Vec<ForgeryProposal>,
}

/// One JSON object per utterance: `{"id": .., "proposals": [[c, start_s, end_s], ..]}`.
pub fn write_proposals_jsonl(proposals: &ProposalSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (id, props) in proposals {
        let line = ProposalLine {
            id: id.clone(),
            proposals: props.clone(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| LocoError::io(path, e))
}

pub fn read_proposals_jsonl(path: impl AsRef<Path>) -> Result<ProposalSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| LocoError::io(path, e))?;
    let mut out = ProposalSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| LocoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ProposalLine = serde_json::from_str(&line)?;
        if let Some(bad) = parsed.proposals.iter().find(|p| !p.is_valid()) {
            return Err(LocoError::InvalidInput(format!(
                "{}: invalid proposal {bad:?}",
                parsed.id
            )));
        }
        if out.insert(parsed.id.clone(), parsed.proposals).is_some() {
            return Err(LocoError::InvalidInput(format!(
                "duplicate id {} in proposals",
                parsed.id
            )));
        }
    }
    Ok(out)
}

/// `id,frame,time_s,score` with one row per frame.
pub fn write_frame_scores_csv(scores: &BTreeMap<String, TFas>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("id,frame,time_s,score\n");
    for (id, tfas) in scores {
        for (t, a) in tfas.scores.iter().enumerate() {
            let _ = writeln!(out, "{id},{t},{},{a}", t as f64 / tfas.fps as f64);
        }
    }
    fs::write(path, out).map_err(|e| LocoError::io(path, e))
}

pub fn read_frame_scores_csv(path: impl AsRef<Path>, fps: u32) -> Result<BTreeMap<String, TFas>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| LocoError::io(path, e))?;
    let mut raw: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = || LocoError::InvalidInput(format!("{}:{}: malformed row", path.display(), n + 1));
        if fields.len() != 4 {
            return Err(parse_err());
        }
        let frame: usize = fields[1].parse().map_err(|_| parse_err())?;
        let score: f64 = fields[3].parse().map_err(|_| parse_err())?;
        raw.entry(fields[0].to_string()).or_default().push((frame, score));
    }
    raw.into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by_key(|r| r.0);
            if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
                return Err(LocoError::InvalidInput(format!("{id}: frame indices are not 0..T")));
            }
            let tfas = TFas::new(rows.into_iter().map(|r| r.1).collect(), fps)?;
            Ok((id, tfas))
        })
        .collect()
}
