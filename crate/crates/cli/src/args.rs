use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Contact perception from proprioception windows: data preparation,
/// metric-learning training grids, evaluation and stream replay.
///
/// Exit codes: 0 success, 1 training aborted, 2 input error.
#[derive(Debug, Parser)]
#[command(name = "cdml", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled log, or perturb an existing one.
    Synth(SynthArgs),
    /// Cut a raw log into windows, split by record and fit normalization.
    Prepare(PrepareArgs),
    /// Train one (architecture, objective, seed) cell.
    Train(TrainArgs),
    /// Train every architecture × objective × seed cell and tabulate.
    Grid(GridArgs),
    /// Test-set accuracy, loss and confusion matrix of a checkpoint.
    Eval(EvalArgs),
    /// Project embeddings onto principal components.
    Embed(EmbedArgs),
    /// Replay a log frame by frame and score contact events.
    Stream(StreamArgs),
    /// Event scores of a source log and optionally a target log, side by side.
    Score(ScoreArgs),
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long, env = "CDML_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Write 0 in place of wall-clock measurements so reruns are byte-identical.
    #[arg(long)]
    pub no_timestamps: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "log.csv")]
    pub name: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Records per raw label (noncontact, intentional L5, intentional L6,
    /// incidental L5, incidental L6).
    #[arg(long, default_value = "8,4,4,4,4")]
    pub records_per_label: String,
    /// Frames per record.
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
    /// Upper bound of the blend between the two contact profiles.
    #[arg(long, default_value_t = 0.0)]
    pub ambiguity: f64,
    /// External-torque sensor noise (N·m).
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Perturb this log instead of generating one.
    #[arg(long)]
    pub from: Option<PathBuf>,
    /// Perturbation: offset added to joint and external torques.
    #[arg(long, default_value_t = 0.0)]
    pub torque_offset: f64,
    /// Perturbation: extra Gaussian noise on every feature.
    #[arg(long, default_value_t = 0.0)]
    pub noise_scale: f64,
    /// Perturbation: playback rate of the trajectory.
    #[arg(long, default_value_t = 1.0)]
    pub time_warp: f64,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Raw log CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 14)]
    pub stride: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Training hyperparameters. Each flag overrides the config-file key of the
/// same name (dashes for underscores), which overrides the built-in default.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// pairwise | triplet | magnet | baseline [default: triplet]
    #[arg(long)]
    pub loss: Option<String>,
    /// facenet | conv2dnet | conv1dnet [default: conv1dnet]
    #[arg(long)]
    pub arch: Option<String>,
    /// Embedding epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<String>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<String>,
    /// Pairwise pairs per step [default: 64]
    #[arg(long)]
    pub batch_pairs: Option<String>,
    /// Triplet classes per step [default: 3]
    #[arg(long)]
    pub batch_classes: Option<String>,
    /// Triplet windows per class per step [default: 16]
    #[arg(long)]
    pub batch_per_class: Option<String>,
    /// Cross-entropy minibatch [default: 32]
    #[arg(long)]
    pub batch_size: Option<String>,
    /// Pairwise and triplet margin [default: 0.2]
    #[arg(long)]
    pub margin: Option<String>,
    /// Magnet cluster margin [default: 1]
    #[arg(long)]
    pub alpha: Option<String>,
    /// Magnet clusters per class [default: 3]
    #[arg(long)]
    pub clusters: Option<String>,
    /// Magnet steps between cluster refreshes, or `auto` for one epoch [default: auto]
    #[arg(long)]
    pub refresh_steps: Option<String>,
    /// Magnet imposter clusters per batch [default: 4]
    #[arg(long)]
    pub neighbors: Option<String>,
    /// Magnet windows per batch cluster [default: 8]
    #[arg(long)]
    pub samples_per_cluster: Option<String>,
    /// Classifier-head epochs, or `auto` to match --epochs [default: auto]
    #[arg(long)]
    pub classifier_epochs: Option<String>,
    /// Append L2 normalization to the embedding [default: false]
    #[arg(long)]
    pub l2_normalize: Option<String>,
    /// Comma-separated seeds [default: 0,1,2,3,4]
    #[arg(long)]
    pub seeds: Option<String>,
}

impl TrainFlags {
    pub fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("loss", &self.loss),
            ("arch", &self.arch),
            ("epochs", &self.epochs),
            ("learning_rate", &self.learning_rate),
            ("batch_pairs", &self.batch_pairs),
            ("batch_classes", &self.batch_classes),
            ("batch_per_class", &self.batch_per_class),
            ("batch_size", &self.batch_size),
            ("margin", &self.margin),
            ("alpha", &self.alpha),
            ("clusters", &self.clusters),
            ("refresh_steps", &self.refresh_steps),
            ("neighbors", &self.neighbors),
            ("samples_per_cluster", &self.samples_per_cluster),
            ("classifier_epochs", &self.classifier_epochs),
            ("l2_normalize", &self.l2_normalize),
            ("seeds", &self.seeds),
        ]
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Seed of this run [default: first of --seeds]
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated architectures.
    #[arg(long, default_value = "facenet,conv2dnet,conv1dnet")]
    pub archs: String,
    /// Comma-separated objectives.
    #[arg(long, default_value = "pairwise,triplet,magnet,baseline")]
    pub losses: String,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub out: OutArgs,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Composite checkpoint (embedding followed by classifier head).
    #[arg(long)]
    pub model: PathBuf,
    /// Also report k-nearest-neighbour accuracy in embedding space.
    #[arg(long)]
    pub knn: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Side {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Principal components kept.
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    #[arg(long, value_enum, default_value_t = Side::Test)]
    pub split: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpeedArg {
    Max,
    Realtime,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Normalization statistics [default: norm.json beside the model or one level up]
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Labeled log CSV, or `-` for standard input.
    #[arg(long)]
    pub log: PathBuf,
    #[arg(long, value_enum, default_value_t = SpeedArg::Max)]
    pub speed: SpeedArg,
    /// Agreeing windows needed to open or close an event.
    #[arg(long, default_value_t = 3)]
    pub hold: usize,
    /// Realtime frame queue capacity.
    #[arg(long, default_value_t = 64)]
    pub queue: usize,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Normalization statistics [default: norm.json beside the model or one level up]
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Log of the robot the model was trained on.
    #[arg(long)]
    pub source: PathBuf,
    /// Log of the deployment robot.
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub hold: usize,
}
