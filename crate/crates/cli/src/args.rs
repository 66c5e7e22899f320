use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sclair::model::{ArchKind, PoolPattern};
use sclair::train::{LossMode, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "sclair", version, about = "Supervised contrastive airwriting recognition")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic airwriting dataset with a manifest.
    Synth(SynthArgs),
    /// Train on a whole manifest (80:20 split) and write a checkpoint.
    Train(TrainCmd),
    /// Leave-one-subject-out evaluation.
    Loso(LosoCmd),
    /// Fine-tune a model's classifier head on a target dataset.
    Finetune(FinetuneCmd),
    /// Evaluate a checkpoint on a manifest.
    Eval(EvalCmd),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckCmd),
    /// Summarize report files.
    Report(ReportCmd),
}

fn parse_arch(s: &str) -> Result<ArchKind, String> {
    s.parse().map_err(|e: sclair::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossMode, String> {
    s.parse().map_err(|e: sclair::Error| e.to_string())
}

fn parse_pool(s: &str) -> Result<PoolPattern, String> {
    match s {
        "middle" => Ok(PoolPattern::Middle),
        "after-each" => Ok(PoolPattern::AfterEach),
        other => Err(format!("unknown pool pattern `{other}` (expected middle or after-each)")),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub subjects: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 62.0)]
    pub rate: f64,
    #[arg(long, env = "SCLAIR_SEED", default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
    /// Use the shifted "target device" jitter and noise profile.
    #[arg(long)]
    pub target_device: bool,
}

/// Hyperparameters shared by every training command.
#[derive(Debug, Args)]
pub struct Hyper {
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    #[arg(long, default_value_t = 128)]
    pub proj_dim: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Smallest validation-loss drop that counts as an improvement.
    #[arg(long, default_value_t = 1e-4)]
    pub min_delta: f64,
    #[arg(long, default_value_t = 0.2)]
    pub val_ratio: f64,
    #[arg(long, env = "SCLAIR_SEED", default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Feed the raw encoder output to the heads.
    #[arg(long)]
    pub no_normalize_r: bool,
    /// Skip normalizing the projection output.
    #[arg(long)]
    pub no_normalize_z: bool,
    /// Keep last-epoch weights instead of the best-validation ones.
    #[arg(long)]
    pub no_restore_best: bool,
    /// Round-robin over classes when forming batches.
    #[arg(long)]
    pub balanced_batches: bool,
    #[arg(long, default_value = "middle", value_parser = parse_pool)]
    pub pool_pattern: PoolPattern,
    /// Record wall-clock time in the report (makes reports non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

impl Hyper {
    pub fn config(&self, arch: ArchKind, loss_mode: LossMode) -> TrainConfig {
        TrainConfig {
            loss_mode,
            arch,
            tau: self.tau,
            proj_dim: self.proj_dim,
            learning_rate: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            val_ratio: self.val_ratio,
            seed: self.seed,
            normalize_r: !self.no_normalize_r,
            normalize_z: !self.no_normalize_z,
            classifier_dropout: self.dropout,
            pool_pattern: self.pool_pattern,
            restore_best: !self.no_restore_best,
            warm_start_head: false,
            balanced_batches: self.balanced_batches,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "1dcnn", value_parser = parse_arch)]
    pub arch: ArchKind,
    #[arg(long, default_value = "scl", value_parser = parse_loss)]
    pub loss: LossMode,
    #[command(flatten)]
    pub hyper: Hyper,
    /// Checkpoint path.
    #[arg(long, default_value = "model.sclr")]
    pub out: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LosoCmd {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "1dcnn", value_parser = parse_arch)]
    pub arch: ArchKind,
    #[arg(long, default_value = "scl", value_parser = parse_loss)]
    pub loss: LossMode,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, default_value = "loso_report.json")]
    pub report: PathBuf,
    /// Confusion matrix CSV; defaults to `<report>.confusion.csv`.
    #[arg(long)]
    pub confusion_csv: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct FinetuneCmd {
    /// Source-trained checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Target dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Expected architecture; defaults to the checkpoint's.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<ArchKind>,
    #[command(flatten)]
    pub hyper: Hyper,
    /// Keep the source classifier as the starting point.
    #[arg(long)]
    pub warm_start_head: bool,
    #[arg(long, default_value = "finetune_report.json")]
    pub report: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report path; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Number of confused letter pairs to list.
    #[arg(long, default_value_t = 5)]
    pub confusions: usize,
    /// Write per-sample embeddings to this CSV.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckCmd {
    #[arg(long, default_value = "1dcnn", value_parser = parse_arch)]
    pub arch: ArchKind,
    #[arg(long, env = "SCLAIR_SEED", default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    /// Report JSON files written by other subcommands.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}
