mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "flowsub", version, about = "Motion segmentation and depth from optical flow subspaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic scene to flow.flo, gt_disparity.pfm and gt_labels.png.
    Synth(SynthArgs),
    /// Project a flow onto the subspace of a given disparity and label map.
    Project(ProjectArgs),
    /// Recover disparity and masks from a flow field.
    Fit(FitArgs),
    /// Score predictions against ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render flow fields with the color wheel.
    Viz(VizArgs),
    /// Re-run a recorded command and compare output hashes.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
pub struct CameraArgs {
    /// Focal lengths in pixels as `fx,fy`, or a single value for both.
    #[arg(long)]
    pub focal: Option<String>,
    /// Principal point as `cx,cy`; defaults to the image center.
    #[arg(long)]
    pub principal_point: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene description JSON. Without it a random scene is drawn.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "K", default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, value_enum, default_value_t = MotionMixArg::Mixed)]
    pub motion: MotionMixArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum MotionMixArg {
    Mixed,
    Rotation,
    Translation,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long)]
    pub flow: PathBuf,
    #[arg(long)]
    pub disparity: PathBuf,
    /// Label PNG; each label becomes a one-hot region.
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long = "K")]
    pub k: usize,
    /// full | only-t | only-r | focalFree8 | intrinsic6
    #[arg(long, default_value = "focalFree8")]
    pub basis: String,
    #[arg(long, default_value_t = flowsub::projector::DEFAULT_SV_THRESHOLD)]
    pub sv_threshold: f64,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub flow: PathBuf,
    /// FitConfig JSON; explicit flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// full | only-t | only-r | focalFree8 | intrinsic6
    #[arg(long)]
    pub basis: Option<String>,
    #[command(flatten)]
    pub camera: CameraArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// FG-ARI, Hungarian mIoU and J over one or more frames.
    Seg(EvalSegArgs),
    /// Depth error metrics.
    Depth(EvalDepthArgs),
}

#[derive(Args, Debug)]
pub struct EvalSegArgs {
    /// Predicted label PNGs, paired in order with `--gt`.
    #[arg(long, num_args = 1.., required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub gt: Vec<PathBuf>,
    /// Clean predictions with connected-component post-processing first.
    #[arg(long)]
    pub postprocess: bool,
    #[arg(long = "K", default_value_t = 6)]
    pub k: usize,
    #[arg(long, default_value_t = flowsub::metrics::postprocess::DEFAULT_MIN_FRAC)]
    pub min_frac: f64,
    /// Use 8-connectivity instead of 4.
    #[arg(long)]
    pub eight_connected: bool,
    #[arg(long)]
    pub per_frame: bool,
    /// Report path (.json, or .csv for a header plus one row).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalDepthArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Treat the prediction as disparity (inverse depth).
    #[arg(long)]
    pub pred_is_disparity: bool,
    /// Treat the ground truth file as disparity.
    #[arg(long)]
    pub gt_is_disparity: bool,
    #[arg(long, default_value_t = 10.0)]
    pub cap: f64,
    #[arg(long)]
    pub median_scale: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[arg(long, conflicts_with = "glob", required_unless_present = "glob")]
    pub flow: Option<PathBuf>,
    /// Pattern of .flo files to render in parallel (FLOWSUB_THREADS workers).
    #[arg(long)]
    pub glob: Option<String>,
    /// Output PNG, or output directory with `--glob`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_magnitude: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind, "message": e.message }));
            ExitCode::from(1)
        }
    }
}
