use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use loco_core::features::{synth_dataset, DatasetManifest, FeatureSequence, Split, SynthConfig};
use loco_core::localize::{gen_proposals, proposals_to_pseudo_labels, TFas, DEFAULT_LAMBDA_A, DEFAULT_THETA_F};
use loco_core::losses::KlMode;
use loco_core::metrics::{evaluate, mean_ap, EvalConfig, FrameData};
use loco_core::model::{load_checkpoint, model_forward, save_checkpoint, AttentionAxis, Checkpoint, ModelParams};
use loco_core::pipeline::{
    eval_set, infer_all, proposals_at, read_frame_scores_csv, read_proposals_jsonl, write_frame_scores_csv,
    write_proposals_jsonl, EvalExample, TrainingSet,
};
use loco_core::trainer::{train_stage1, train_stage2, write_loss_curve, NoHooks, SelectionMetric, TrainConfig};
use serde::de::DeserializeOwned;

use crate::{
    AxisArg, Cli, Command, DumpArgs, EvalArgs, KlModeArg, LocalizeArgs, SelectArg, SplitArg, SynthArgs, TrainArgs,
};

pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(err: E) -> Self {
        CliError::Runtime(err.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .context("configuring the worker pool")?;
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Synth(args) => synth(args, config, cli.seed),
        Command::Train(args) => train(args, config, cli.seed),
        Command::Localize(args) => localize(args, config),
        Command::Eval(args) => eval(args),
        Command::DumpEmbeddings(args) => dump_embeddings(args, config),
    }
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

fn synth(args: &SynthArgs, config: Option<&Path>, seed: Option<u64>) -> CliResult {
    let mut cfg: SynthConfig = read_config(config)?;
    if let Some(n) = args.n {
        cfg.n_utterances = n;
    }
    if let Some(d) = args.dim {
        cfg.dim = d;
    }
    if let Some(p) = args.forgery_prob {
        cfg.forgery_prob = p;
    }
    if let Some(s) = args.class_shift {
        cfg.class_shift = s;
    }
    if let Some(split) = args.split {
        cfg.split = match split {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        };
    }
    if let Some(prefix) = &args.id_prefix {
        cfg.id_prefix = prefix.clone();
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    synth_dataset(&cfg, &args.out)?;
    println!("{}", args.out.join("manifest.json").display());
    Ok(())
}

fn train_config(args: &TrainArgs, config: Option<&Path>, seed: Option<u64>) -> CliResult<TrainConfig> {
    let mut cfg: TrainConfig = read_config(config)?;
    if let Some(v) = args.steps {
        cfg.stage1_steps = v;
    }
    if let Some(v) = args.epochs {
        cfg.stage2_epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.adam.learning_rate = v;
    }
    if let Some(v) = args.hidden_dim {
        cfg.model.hidden_dim = v;
    }
    if let Some(v) = args.proj_kernel {
        cfg.model.proj_kernel = v;
    }
    if let Some(v) = args.block_kernel {
        cfg.model.block_kernel = v;
    }
    if let Some(v) = args.attention_axis {
        cfg.model.attention_axis = match v {
            AxisArg::Time => AttentionAxis::Time,
            AxisArg::Channel => AttentionAxis::Channel,
        };
    }
    if let Some(v) = args.top_k {
        cfg.loss.top_k = v;
    }
    if let Some(v) = args.lambda_kl {
        cfg.loss.lambda_kl = v;
    }
    if let Some(v) = args.lambda_scl {
        cfg.loss.lambda_scl = v;
    }
    if let Some(v) = args.kl_mode {
        cfg.loss.kl_mode = match v {
            KlModeArg::AsWritten => KlMode::AsWritten,
            KlModeArg::Aligning => KlMode::Aligning,
        };
    }
    if let Some(v) = args.eval_every {
        cfg.eval_every = v;
    }
    if let Some(v) = args.select_by {
        cfg.stage1_selection = match v {
            SelectArg::FrameAuc => SelectionMetric::FrameAuc,
            SelectArg::Map => SelectionMetric::Map,
        };
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn load_manifest(path: &Path) -> anyhow::Result<Vec<FeatureSequence>> {
    let manifest = DatasetManifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
    Ok(manifest.load_all()?)
}

fn train(args: &TrainArgs, config: Option<&Path>, seed: Option<u64>) -> CliResult {
    let mut cfg = train_config(args, config, seed)?;
    let train_set = TrainingSet::from_sequences(&load_manifest(&args.train)?);
    let val: Vec<EvalExample> = match &args.val {
        Some(path) => eval_set(&load_manifest(path)?)?,
        None => Vec::new(),
    };

    let outcome = if args.stage == 1 {
        if let Some(first) = train_set.examples.first() {
            cfg.model.input_dim = first.feats().ncols();
        }
        train_stage1(&train_set, &val, &cfg, &mut NoHooks)?
    } else {
        let base_path = args
            .base_ckpt
            .as_ref()
            .ok_or_else(|| CliError::Usage("stage 2 requires --base-ckpt".into()))?;
        let base = load_checkpoint(base_path).with_context(|| format!("loading {}", base_path.display()))?;
        if args.hidden_dim.is_none() && config.is_none() {
            cfg.model = base.params.config.clone();
        }
        train_stage2(&base.params, &train_set, &val, &cfg, &mut NoHooks)?
    };

    save_checkpoint(&Checkpoint::new(outcome.params, cfg.seed, args.stage), &args.out)?;
    let loss_path = args
        .loss_csv
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".loss.csv"));
    write_loss_curve(&outcome.curve, &loss_path)?;
    println!("{}", args.out.display());
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn fusion_settings(config: Option<&Path>, theta: Option<f64>, lambda_a: Option<f64>) -> CliResult<(f64, f64)> {
    let (cfg_theta, cfg_lambda) = match config {
        Some(_) => {
            let cfg: TrainConfig = read_config(config)?;
            (cfg.theta_f, cfg.lambda_a)
        }
        None => (DEFAULT_THETA_F, DEFAULT_LAMBDA_A),
    };
    let theta = theta.unwrap_or(cfg_theta);
    let lambda_a = lambda_a.unwrap_or(cfg_lambda);
    if !(theta > 0.0 && theta < 1.0) {
        return Err(CliError::Usage(format!("--theta must lie in (0, 1), got {theta}")));
    }
    if !(0.0..=1.0).contains(&lambda_a) {
        return Err(CliError::Usage(format!(
            "--lambda-a must lie in [0, 1], got {lambda_a}"
        )));
    }
    Ok((theta, lambda_a))
}

fn score_manifest(
    ckpt: &Path,
    manifest: &Path,
    lambda_a: f64,
) -> anyhow::Result<(ModelParams, Vec<EvalExample>, BTreeMap<String, TFas>)> {
    let params = load_checkpoint(ckpt)
        .with_context(|| format!("loading {}", ckpt.display()))?
        .params;
    let examples = eval_set(&load_manifest(manifest)?)?;
    let scores = infer_all(
        &params,
        examples
            .iter()
            .map(|e| (e.id.as_str(), &e.feats, e.fps))
            .collect::<Vec<_>>(),
        lambda_a,
    )?;
    Ok((params, examples, scores))
}

fn localize(args: &LocalizeArgs, config: Option<&Path>) -> CliResult {
    let (theta, lambda_a) = fusion_settings(config, args.theta, args.lambda_a)?;
    let (_, _, scores) = score_manifest(&args.ckpt, &args.manifest, lambda_a)?;
    write_proposals_jsonl(&proposals_at(&scores, theta), &args.out)?;
    if let Some(path) = &args.scores {
        write_frame_scores_csv(&scores, path)?;
    }
    Ok(())
}

const SWEEP_THETAS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

fn eval(args: &EvalArgs) -> CliResult {
    let manifest = DatasetManifest::read(&args.manifest)
        .with_context(|| format!("reading manifest {}", args.manifest.display()))?;
    let gt: BTreeMap<String, _> = manifest
        .entries
        .iter()
        .map(|e| (e.id.clone(), e.gt_segments.clone()))
        .collect();
    let proposals = read_proposals_jsonl(&args.proposals)?;
    check_ids(&gt, &proposals, "proposals")?;

    let cfg = EvalConfig::default();
    let report = match &args.scores {
        Some(path) => {
            let fps = manifest.entries.first().map_or(50, |e| e.fps);
            let scores = read_frame_scores_csv(path, fps)?;
            check_ids(&gt, &scores, "frame scores")?;
            let mut flat_scores = Vec::new();
            let mut flat_labels = Vec::new();
            for entry in &manifest.entries {
                let tfas = &scores[&entry.id];
                if tfas.len() != entry.n_frames {
                    return Err(anyhow!("{}: {} scores for {} frames", entry.id, tfas.len(), entry.n_frames).into());
                }
                flat_scores.extend_from_slice(&tfas.scores);
                flat_labels.extend(loco_core::features::segments_to_frame_labels(
                    &entry.gt_segments,
                    entry.n_frames,
                    entry.fps,
                )?);
            }
            if let Some(sweep) = &args.sweep_theta {
                let mut csv = String::from("theta,mAP\n");
                for theta in SWEEP_THETAS {
                    let map = mean_ap(&proposals_at(&scores, theta), &gt, &cfg.iou_thresholds);
                    let _ = writeln!(csv, "{theta},{map}");
                }
                fs::write(sweep, csv).with_context(|| format!("writing {}", sweep.display()))?;
            }
            evaluate(
                Some(FrameData {
                    scores: &flat_scores,
                    labels: &flat_labels,
                }),
                &proposals,
                &gt,
                &cfg,
            )?
        }
        None => evaluate(None, &proposals, &gt, &cfg)?,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn check_ids<A, B>(gt: &BTreeMap<String, A>, predicted: &BTreeMap<String, B>, what: &str) -> anyhow::Result<()> {
    let missing: Vec<&str> = gt
        .keys()
        .filter(|id| !predicted.contains_key(*id))
        .map(String::as_str)
        .collect();
    let unknown: Vec<&str> = predicted
        .keys()
        .filter(|id| !gt.contains_key(*id))
        .map(String::as_str)
        .collect();
    if missing.is_empty() && unknown.is_empty() {
        return Ok(());
    }
    let mut msg = format!("{what} do not match the manifest");
    if !missing.is_empty() {
        let _ = write!(msg, "; missing ids: {}", missing.join(", "));
    }
    if !unknown.is_empty() {
        let _ = write!(msg, "; unknown ids: {}", unknown.join(", "));
    }
    Err(anyhow!(msg))
}

fn dump_embeddings(args: &DumpArgs, config: Option<&Path>) -> CliResult {
    let (theta, lambda_a) = fusion_settings(config, args.theta, args.lambda_a)?;
    let (params, examples, scores) = score_manifest(&args.ckpt, &args.manifest, lambda_a)?;
    let mut out = String::from("id,frame,label,pseudo_label");
    for c in 0..params.config.hidden_dim {
        let _ = write!(out, ",f{c}");
    }
    out.push('\n');
    for e in &examples {
        let trace = model_forward(&e.feats, &params)?;
        let pseudo = proposals_to_pseudo_labels(&gen_proposals(&scores[&e.id], theta), e.feats.nrows(), e.fps)?;
        for (t, row) in trace.f_t.rows().into_iter().enumerate() {
            let _ = write!(out, "{},{t},{},{}", e.id, e.frame_labels[t], pseudo[t]);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    fs::write(&args.out, out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
