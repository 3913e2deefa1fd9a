use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ptl", version, about = "Progressive transformation curriculum engine")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON file with default values for any flag; flags given on the
    /// command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Log progress to standard error.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a Gaussian class model to a feature file.
    Fit(FitArgs),
    /// Score a pool of per-scale feature files against a model.
    Gap(GapArgs),
    /// Sample candidates from a score table.
    Select(SelectArgs),
    /// Run exactly one more iteration on a snapshot.
    Iterate(LoopArgs),
    /// Run a snapshot up to the configured number of iterations.
    Run(LoopArgs),
    /// Generate a synthetic world and run the loop on it in-process.
    Synth(SynthArgs),
    /// Emit CSV reports from a snapshot.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "PTLF")]
    pub features: PathBuf,
    #[arg(long, value_name = "MODEL_JSON")]
    pub out: PathBuf,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub category: Option<String>,
}

#[derive(Debug, Args)]
pub struct GapArgs {
    #[arg(long, value_name = "MODEL_JSON")]
    pub model: PathBuf,
    /// Directory of PTLF files, one per scale.
    #[arg(long, value_name = "DIR")]
    pub pool: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<u32>>,
    /// Skip scales an instance lacks instead of failing.
    #[arg(long)]
    pub partial: bool,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long, value_name = "CSV")]
    pub scores: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Iteration number recorded in the manifest.
    #[arg(long, default_value_t = 0)]
    pub iteration: u64,
    #[arg(long, value_name = "MANIFEST_JSON")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    #[arg(long, value_name = "SNAPSHOT_JSON")]
    pub state: PathBuf,
    /// Embedder command; `--request <path>` is appended.
    #[arg(long, value_name = "CMD")]
    pub embedder: Option<String>,
    /// Transformer command; `--request <path>` is appended.
    #[arg(long, value_name = "CMD")]
    pub transformer: Option<String>,
    /// Real-set features used to seed a new snapshot (ids only are kept).
    #[arg(long, value_name = "PTLF")]
    pub init_real: Option<PathBuf>,
    /// Virtual-pool metadata used to seed a new snapshot.
    #[arg(long, value_name = "CSV")]
    pub init_pool: Option<PathBuf>,
    /// Where adapter requests and outputs are kept [default: <state>.work].
    #[arg(long, value_name = "DIR")]
    pub work_dir: Option<PathBuf>,
    /// Per-invocation adapter timeout in seconds.
    #[arg(long)]
    pub timeout: Option<u64>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<u32>>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub ridge: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub partial: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub real_count: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Histogram bins in the gap reports.
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    GapHist,
    MetadataSpread,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "SNAPSHOT_JSON")]
    pub state: PathBuf,
    #[arg(long, value_enum)]
    pub kind: ReportKind,
    /// Output CSV. For `gap-hist` one file per iteration is written next to
    /// it as `<stem>_iter<N>.csv`.
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Last iteration counted by `metadata-spread` [default: all].
    #[arg(long)]
    pub through: Option<u64>,
}
