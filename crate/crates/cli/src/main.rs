mod commands;
mod config;
mod plot;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use loopgan_core::melpipe::Split;
use loopgan_core::projector::ProjectorMode;
use loopgan_core::trainer::TrainMode;
use loopgan_core::Error;
use serde::{Deserialize, Serialize};

use config::Dtype;

/// Relative output paths are resolved against this directory when it is set.
pub const OUTPUT_ROOT_ENV: &str = "LOOPGAN_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "loopgan", version, about = "Train and evaluate mel-spectrogram loop generators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a normalized one-bar clip corpus from wav loops or the synthetic generator.
    Preprocess(PreprocessArgs),
    /// Train a feature network (general or domain tagger) on a corpus.
    TrainClassifier(ClassifierArgs),
    /// Train a generator from a TOML run config.
    Train(TrainArgs),
    /// Sample clips from a trained generator: mel blobs, PNGs and wavs.
    Generate(GenerateArgs),
    /// FAD, IS and density/coverage of a clip set against a real corpus.
    Evaluate(EvaluateArgs),
    /// Overlay FAD and IS curves of one or more runs.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl SplitArg {
    pub fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Val => Some(Split::Val),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NetArg {
    General,
    Domain,
}

#[derive(Args, Debug, Serialize)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["input", "synthetic"]))]
pub struct PreprocessArgs {
    /// Directory of wav loops, each with a json sidecar or a tempo in its name.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Synthetic corpus: SEED N_CLIPS N_CLASSES.
    #[arg(long, num_args = 3, value_names = ["SEED", "N", "CLASSES"])]
    pub synthetic: Option<Vec<u64>>,
    /// Extra non-loop classes mixed into a synthetic corpus.
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
    #[arg(long, num_args = 3, value_names = ["TRAIN", "VAL", "TEST"], default_values_t = [0.8, 0.1, 0.1])]
    pub split_ratio: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,
}

#[derive(Args, Debug, Serialize)]
pub struct ClassifierArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum)]
    pub kind: NetArg,
    /// Output weights file.
    #[arg(long)]
    pub out: PathBuf,
    /// Channels per stage (4 for general, 6 for domain); defaults to the full-size network.
    #[arg(long, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, default_value_t = 128)]
    pub embedding_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TOML run config; keys not given take the trainer defaults.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub projector: Option<ProjectorArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from a trainer checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Projected,
    Baseline,
}

impl From<ModeArg> for TrainMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Projected => TrainMode::Projected,
            ModeArg::Baseline => TrainMode::Baseline,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProjectorArg {
    General,
    Domain,
    Fusion,
}

impl From<ProjectorArg> for ProjectorMode {
    fn from(p: ProjectorArg) -> Self {
        match p {
            ProjectorArg::General => ProjectorMode::General,
            ProjectorArg::Domain => ProjectorMode::Domain,
            ProjectorArg::Fusion => ProjectorMode::Fusion,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Generator weights, a trainer checkpoint, or a run directory.
    #[arg(long)]
    pub generator: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus whose normalization range is undone before vocoding. Defaults
    /// to the `norm_stats.json` saved next to the generator.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = loopgan_core::melpipe::GRIFFIN_LIM_ITERS)]
    pub griffin_lim_iters: usize,
    /// Skip wav rendering.
    #[arg(long)]
    pub no_audio: bool,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Real reference corpus.
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub real_split: SplitArg,
    /// Corpus directory or a directory of clips written by `generate`.
    #[arg(long)]
    pub fake: PathBuf,
    /// Split used when `--fake` is a corpus.
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    pub fake_split: SplitArg,
    /// General feature network defining the FAD embedding.
    #[arg(long)]
    pub general: PathBuf,
    /// Tagger whose posteriors give the inception score.
    #[arg(long)]
    pub classifier: Option<PathBuf>,
    #[arg(long, default_value_t = loopgan_core::metrics::DC_K)]
    pub k: usize,
    #[arg(long, default_value_t = loopgan_core::metrics::IS_SPLITS)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub metric_seed: u64,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Dtype::F32)]
    pub dtype: Dtype,
}

#[derive(Args, Debug, Serialize)]
pub struct PlotArgs {
    /// Run manifests or run directories.
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
    /// Output SVG; the plotted numbers go to the same path with a `.json` extension.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::TrainingDiverged { .. } | Error::Numerical(_) => 3,
        Error::Io { .. } => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::TrainClassifier(a) => commands::train_classifier(&a),
        Command::Train(a) => commands::train(&a),
        Command::Generate(a) => commands::generate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Plot(a) => commands::plot(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
