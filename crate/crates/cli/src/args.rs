use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Seed used by every subcommand unless `--seed` says otherwise.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "cardiaq", version, about = "Biventricular segmentation and function quantification for cine MR")]
pub struct Cli {
    /// `key = value` file supplying defaults for any flag.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic cases with analytic ground truth in the ACDC layout.
    Phantom(PhantomArgs),
    /// Train the segmentation network on ACDC-layout cases.
    Train(TrainArgs),
    /// Write predicted masks for every frame of each case.
    Segment(SegmentArgs),
    /// Compute clinical metrics from masks.
    Quantify(QuantifyArgs),
    /// Join predicted and reference metrics into a concordance table.
    Evaluate(EvaluateArgs),
    /// Time segmentation plus quantification per study.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Numbering {
    /// `frame00` is the first volume.
    #[default]
    Zero,
    /// `frame01` is the first volume, as in the public release.
    One,
}

impl From<Numbering> for cardiaq::study_io::FrameNumbering {
    fn from(n: Numbering) -> Self {
        match n {
            Numbering::Zero => cardiaq::study_io::FrameNumbering::ZeroBased,
            Numbering::One => cardiaq::study_io::FrameNumbering::OneBased,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Localize {
    #[default]
    Heuristic,
    Learned,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// In-plane pixel size, mm.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, value_enum, default_value_t)]
    pub numbering: Numbering,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of case directories (or a single case directory).
    #[arg(long, value_name = "DIR")]
    pub cases: PathBuf,
    /// Parameter file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long = "batch-size", default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long = "lambda-prior", default_value_t = 0.1)]
    pub lambda_prior: f64,
    #[arg(long = "w-ce", default_value_t = 1.0)]
    pub w_ce: f64,
    #[arg(long = "w-dice", default_value_t = 1.0)]
    pub w_dice: f64,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub width: usize,
    #[arg(long, default_value_t = 16)]
    pub latent: usize,
    /// Epochs for the stage-1 localisation network; 0 skips it.
    #[arg(long = "localizer-epochs", default_value_t = 0)]
    pub localizer_epochs: usize,
    /// Optional CSV of the per-epoch loss.
    #[arg(long, value_name = "FILE")]
    pub history: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub numbering: Numbering,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub cases: PathBuf,
    /// Output root; masks go to `<out>/<case>/<case>_frameNN_pred.nii.gz`.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub localize: Localize,
    #[arg(long, value_enum, default_value_t)]
    pub numbering: Numbering,
}

#[derive(Debug, Args)]
pub struct QuantifyArgs {
    #[arg(long, value_name = "DIR")]
    pub cases: PathBuf,
    /// Root of predicted masks written by `segment`; ground truth is used
    /// when absent.
    #[arg(long, value_name = "DIR")]
    pub pred: Option<PathBuf>,
    /// Report path; `.json` selects JSON, anything else CSV.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub numbering: Numbering,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Metrics CSV of the automatic method.
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
    /// Metrics CSV of the reference.
    #[arg(long, value_name = "FILE")]
    pub truth: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub cases: PathBuf,
    /// CSV with columns `case_id, seconds`.
    #[arg(long = "manual-times", value_name = "FILE")]
    pub manual_times: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub repetitions: usize,
    /// Optional JSON report.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub localize: Localize,
    #[arg(long, value_enum, default_value_t)]
    pub numbering: Numbering,
}
