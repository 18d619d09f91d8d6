//! `detcal`: calibration evaluation for object detectors.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "detcal",
    version,
    about = "Calibration evaluation for object detectors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score one prediction dump against ground truth and write the report.
    Evaluate(EvaluateArgs),
    /// Put several evaluation runs side by side.
    Compare(CompareArgs),
    /// Re-score a run under a grid of probability transforms.
    Sweep(SweepArgs),
    /// Write a synthetic dataset and prediction dump.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtFormatArg {
    Coco,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PredKindArg {
    Probs,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatchingArg {
    #[value(name = "one2one")]
    OneToOne,
    #[value(name = "many2one")]
    ManyToOne,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Ground-truth annotations.
    #[arg(long, value_name = "PATH")]
    pub gt: PathBuf,
    /// Prediction dump.
    #[arg(long, value_name = "PATH")]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value_t = GtFormatArg::Coco)]
    pub gt_format: GtFormatArg,
    #[arg(long, value_enum, default_value_t = PredKindArg::Probs)]
    pub pred_kind: PredKindArg,
    /// Score filter, per-class NMS and top-k before matching.
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub postprocess: Toggle,
    #[arg(long, default_value_t = 0.05)]
    pub score_thresh: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
    #[arg(long, default_value_t = 100)]
    pub top_k: usize,
    #[arg(long, value_enum, default_value_t = MatchingArg::OneToOne)]
    pub matching: MatchingArg,
    #[arg(long, default_value_t = 0.5)]
    pub iou_thresh: f64,
    /// Number of equal-width probability bins.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Run label used in reports and comparisons.
    #[arg(long, default_value = "run")]
    pub label: String,
    /// Output directory, created if needed.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Bins of the log-entropy histogram.
    #[arg(long, default_value_t = 20)]
    pub entropy_bins: usize,
    /// Out-of-distribution run: AP is reported as not applicable.
    #[arg(long)]
    pub ood: bool,
    /// Also write per-image match results as JSON lines.
    #[arg(long, value_name = "PATH")]
    pub dump_matches: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Output directories of earlier `evaluate` runs.
    #[arg(required = true, value_name = "RUN_DIR")]
    pub runs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Background weights as START:STOP:STEP.
    #[arg(long, value_name = "A:B:S")]
    pub grid_bg_weight: Option<String>,
    /// Temperatures as START:STOP:STEP.
    #[arg(long, value_name = "A:B:S")]
    pub grid_temperature: Option<String>,
    /// Leave missing-ground-truth placeholders untouched by the transforms.
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    pub recal_skip_missing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Standard,
    TceBlind,
    Duplicates,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub images: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Objects per image as MIN:MAX.
    #[arg(long, default_value = "1:6")]
    pub objects: String,
    /// none, temp:T or bg:B.
    #[arg(long, default_value = "none")]
    pub miscal: String,
    /// Box jitter of detections.
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub miss_rate: f64,
    #[arg(long, default_value_t = 0.3)]
    pub spurious_rate: f64,
    /// Dirichlet concentration of the drawn probability vectors.
    #[arg(long, default_value_t = 0.5)]
    pub concentration: f64,
    /// Extra flatter copies per detected object.
    #[arg(long, default_value_t = 0)]
    pub duplicates: usize,
    #[arg(long, value_enum, default_value_t = Scenario::Standard)]
    pub scenario: Scenario,
    /// Record count for the tce-blind scenario.
    #[arg(long, default_value_t = 10_000)]
    pub records: usize,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("DETCAL_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::Config(format!(
            "DETCAL_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Synth(args) => commands::synth(&args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("detcal: {e}");
            e.exit_code()
        }
    }
}
