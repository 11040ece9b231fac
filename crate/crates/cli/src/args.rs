use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "amodal", version, about = "Synthetic amodal segmentation workbench")]
pub struct Cli {
    /// Seed for every random choice; required by generate, segment
    /// --method degraded, train-head and ablate.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic RGB-D dataset with amodal ground truth.
    Generate(GenerateArgs),
    /// Run a reference segmenter over a dataset.
    Segment(SegmentArgs),
    /// Score predictions against a dataset.
    Evaluate(EvaluateArgs),
    /// Train one occlusion head on a dataset's ground-truth boxes.
    TrainHead(TrainHeadArgs),
    /// Hierarchy-order or fusion ablation over several seeds.
    Ablate(AblateArgs),
    /// Plan the removals needed to retrieve one object.
    Plan(PlanArgs),
    /// Write RGB, depth and occlusion overlay images for one scene.
    Render(RenderArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Segment(_) => "segment",
            Command::Evaluate(_) => "evaluate",
            Command::TrainHead(_) => "train-head",
            Command::Ablate(_) => "ablate",
            Command::Plan(_) => "plan",
            Command::Render(_) => "render",
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub min_objects: Option<usize>,
    #[arg(long)]
    pub max_objects: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub depth_noise: Option<f64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegMethod {
    Oracle,
    Degraded,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionArg {
    ConvexHull,
    BoxFill,
    None,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long, value_enum)]
    pub method: Option<SegMethod>,
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// degraded: erosion radius in pixels
    #[arg(long)]
    pub erode_radius: Option<usize>,
    #[arg(long)]
    pub drop_prob: Option<f64>,
    #[arg(long)]
    pub merge_prob: Option<f64>,
    #[arg(long)]
    pub split_prob: Option<f64>,
    /// depth: depth step that separates neighbouring pixels
    #[arg(long)]
    pub tau_d: Option<f64>,
    #[arg(long)]
    pub min_area: Option<usize>,
    #[arg(long, value_enum)]
    pub completion: Option<CompletionArg>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub predictions: Option<PathBuf>,
    /// Boundary tolerance as a fraction of the image diagonal.
    #[arg(long)]
    pub tol_frac: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    He,
    Glorot,
}

/// Head options shared by train-head and ablate.
#[derive(Debug, Args)]
pub struct HeadArgs {
    /// Feature channels.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Background RoIs sampled per scene.
    #[arg(long)]
    pub negatives: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Branch order, e.g. VAO or O->A->V.
    #[arg(long)]
    pub hierarchy: Option<String>,
    #[arg(long, value_name = "BOOL")]
    pub fuse_box: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    pub fuse_prior: Option<bool>,
    #[command(flatten)]
    pub head: HeadArgs,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Also write the per-100-step loss curve as JSON.
    #[arg(long, value_name = "FILE")]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblateMode {
    Hierarchy,
    Fusion,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub mode: Option<AblateMode>,
    /// Number of training seeds, counting up from --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Dataset to ablate on; without it one is generated in memory.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Scenes to generate when no dataset is given.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[command(flatten)]
    pub head: HeadArgs,
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMethod {
    Oracle,
    Depth,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<u64>,
    /// Index of the target in the scene's annotation list.
    #[arg(long)]
    pub target: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<PlanMethod>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<u64>,
    /// Output prefix; files get `_rgb.ppm`, `_depth.pgm` and `_overlay.ppm`.
    #[arg(long, value_name = "PREFIX")]
    pub out: Option<PathBuf>,
}
