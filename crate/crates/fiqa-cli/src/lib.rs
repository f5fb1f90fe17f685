//! Command-line front end for the quality scoring library: batch scoring,
//! heatmap rendering, error-versus-discard evaluation, strategy ablation,
//! per-group score summaries, and deterministic weight generation.
//!
//! Every command writes its primary output plus a `.manifest` sidecar
//! recording the invocation. Exit codes: 0 on success, 1 on a runtime
//! failure, 2 on a usage error (clap's default).

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use fiqa_core::config::ConfigError;
use fiqa_core::eval::EvalError;
use fiqa_core::heatmap::HeatmapError;
use fiqa_core::image::ImageError;
use fiqa_core::scoring::{Metric, ScoringError, Strategy};
use fiqa_core::vit::VitError;
use fiqa_core::weights::WeightError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Weights(#[from] WeightError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Forward(#[from] VitError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Heatmap(#[from] HeatmapError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("scores and labels do not join: without label [{without_label}], without score [{without_score}]")]
    JoinMismatch { without_label: String, without_score: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Parser, Debug)]
#[command(name = "fiqa", version, about = "Attention-magnitude face image quality scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score images and write one CSV row per image
    Score(ScoreArgs),
    /// Render patch heatmaps and overlays for a batch of images
    Heatmap(HeatmapArgs),
    /// Build an error-versus-discard curve from embeddings and qualities
    Edc(EdcArgs),
    /// Score one image under every strategy and metric combination
    Ablate(AblateArgs),
    /// Summarize a score CSV per group label
    GroupStats(GroupStatsArgs),
    /// Write a deterministic randomly initialized weight container
    GenWeights(GenWeightsArgs),
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Weight container
    #[arg(long)]
    pub weights: PathBuf,
    /// Model config (key=value lines)
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Aggregation strategy: concat, avg_heads, or head<N>
    #[arg(long, default_value = "concat")]
    pub strategy: Strategy,
    /// Aggregation metric: mean, max, median, inv_std
    #[arg(long, default_value = "mean")]
    pub metric: Metric,
    /// 1-based block whose attention is scored (default: final block)
    #[arg(long)]
    pub block: Option<usize>,
    /// Worker threads (default: one per logical CPU)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Images to score (PPM)
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HeatmapArgs {
    /// Weight container
    #[arg(long)]
    pub weights: PathBuf,
    /// Model config (key=value lines)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if absent
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Heat layer opacity in [0, 1] for the overlay
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Restrict the map to one head (1-based; default: all heads)
    #[arg(long)]
    pub head: Option<usize>,
    /// 1-based block whose attention is mapped (default: final block)
    #[arg(long)]
    pub block: Option<usize>,
    /// Worker threads (default: one per logical CPU)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Images to render (PPM)
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EdcArgs {
    /// Embedding tensor container (one [count x dim] tensor)
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Sidecar id list, one id per line, row order
    #[arg(long)]
    pub ids: PathBuf,
    /// Pair CSV: id_a,id_b,label with label genuine|impostor
    #[arg(long)]
    pub pairs: PathBuf,
    /// Quality CSV; the first two columns are read as id,score
    #[arg(long)]
    pub qualities: PathBuf,
    /// Output curve CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Target false match rate for threshold calibration
    #[arg(long, default_value_t = 1e-3)]
    pub target_fmr: f64,
    /// Spacing of the discard grid
    #[arg(long, default_value_t = 0.02)]
    pub grid_step: f64,
    /// Largest discard fraction on the grid
    #[arg(long, default_value_t = 0.98)]
    pub grid_max: f64,
    /// Cutoff for the partial area under the curve
    #[arg(long, default_value_t = 0.3)]
    pub pauc_cutoff: f64,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Weight container
    #[arg(long)]
    pub weights: PathBuf,
    /// Model config (key=value lines)
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
    /// 1-based block whose attention is scored (default: final block)
    #[arg(long)]
    pub block: Option<usize>,
    /// Image to score under every combination (PPM)
    pub image: PathBuf,
}

#[derive(Args, Debug)]
pub struct GroupStatsArgs {
    /// Score CSV; the first two columns are read as id,score
    #[arg(long)]
    pub scores: PathBuf,
    /// Label CSV: id,group
    #[arg(long)]
    pub labels: PathBuf,
    /// Output CSV
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenWeightsArgs {
    /// Model config (key=value lines)
    #[arg(long)]
    pub config: PathBuf,
    /// RNG seed; the same seed and config always give the same file
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output weight container
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Score(a) => commands::score(&a),
        Command::Heatmap(a) => commands::heatmap(&a),
        Command::Edc(a) => commands::edc(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::GroupStats(a) => commands::group_stats(&a),
        Command::GenWeights(a) => commands::gen_weights(&a),
    }
}
