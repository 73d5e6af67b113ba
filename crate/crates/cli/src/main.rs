mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "loco",
    version,
    about = "Weakly-supervised audio temporal forgery localization"
)]
pub struct Cli {
    /// Seed for data generation, initialization and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel phases.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic feature dataset and its manifest.
    Synth(SynthArgs),
    /// Train stage 1 from scratch or refine a base checkpoint in stage 2.
    Train(TrainArgs),
    /// Score utterances and emit proposals and per-frame T-FAS.
    Localize(LocalizeArgs),
    /// Score proposals (and optionally frame scores) against a manifest.
    Eval(EvalArgs),
    /// Write temporal forgery features with true and pseudo frame labels.
    DumpEmbeddings(DumpArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for feature files and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of utterances.
    #[arg(long)]
    pub n: Option<usize>,
    /// Feature dimension D.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Probability that an utterance contains forged segments.
    #[arg(long)]
    pub forgery_prob: Option<f64>,
    /// Mean offset of forged frames along the forgery direction.
    #[arg(long)]
    pub class_shift: Option<f64>,
    /// Split recorded in the manifest.
    #[arg(long)]
    pub split: Option<SplitArg>,
    /// Prefix for utterance ids.
    #[arg(long)]
    pub id_prefix: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KlModeArg {
    AsWritten,
    Aligning,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AxisArg {
    Time,
    Channel,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SelectArg {
    FrameAuc,
    Map,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// 1 trains from scratch, 2 refines --base-ckpt with pseudo labels.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation manifest used for model selection.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Stage-1 checkpoint to refine; required for stage 2.
    #[arg(long, required_if_eq("stage", "2"))]
    pub base_ckpt: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV; defaults to the checkpoint path with a .loss.csv suffix.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Stage-1 optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Stage-2 epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Utterances per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Adapter width D'.
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Temporal kernel of the input projection (odd).
    #[arg(long)]
    pub proj_kernel: Option<usize>,
    /// Temporal kernel of the residual blocks (odd).
    #[arg(long)]
    pub block_kernel: Option<usize>,
    /// Softmax axis of the temporal attention.
    #[arg(long)]
    pub attention_axis: Option<AxisArg>,
    /// Frames pooled by the multiple-instance loss.
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Weight of the co-learning term.
    #[arg(long)]
    pub lambda_kl: Option<f64>,
    /// Weight of the contrastive term (stage 2).
    #[arg(long)]
    pub lambda_scl: Option<f64>,
    /// Co-learning objective variant.
    #[arg(long)]
    pub kl_mode: Option<KlModeArg>,
    /// Stage-1 steps between validation passes.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Validation metric for picking the stage-1 checkpoint.
    #[arg(long)]
    pub select_by: Option<SelectArg>,
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Proposals JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame T-FAS CSV output.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Proposal threshold [default: 0.5, or theta_f from --config].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Temporal head fusion weight [default: 0.9, or lambda_a from --config].
    #[arg(long)]
    pub lambda_a: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Proposals JSONL.
    #[arg(long)]
    pub proposals: PathBuf,
    /// Ground-truth manifest.
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Per-frame T-FAS CSV; enables EER, AUC and accuracy.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Report JSON output; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Threshold / mAP CSV over θ ∈ {0.5, ..., 0.9}, computed from --scores.
    #[arg(long, requires = "scores")]
    pub sweep_theta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Embedding CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Pseudo-label threshold [default: 0.5, or theta_f from --config].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Temporal head fusion weight [default: 0.9, or lambda_a from --config].
    #[arg(long)]
    pub lambda_a: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
