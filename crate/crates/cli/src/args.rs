use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dandelion::batcher::{BatchingMode, DEFAULT_BATCH_SIZE, DEFAULT_CLUSTERS_PER_BATCH, DEFAULT_NEIGHBOR_CAP};
use dandelion::corpus::DEFAULT_MIN_WORDS;
use dandelion::evalkit::TaskMode;
use dandelion::miner::{MinerMode, DEFAULT_CEILING};
use dandelion::trainer::{
    DEFAULT_EPOCHS, DEFAULT_LEARNING_RATE, DEFAULT_SHARDS_PER_STEP, DEFAULT_TEMPERATURE, RUN_SEEDS,
};

#[derive(Debug, Parser)]
#[command(
    name = "dandelion",
    version,
    about = "Authorship-attribution curriculum over document embeddings",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with known style and topic structure
    Synth(SynthArgs),
    /// Validate a corpus, drop short documents and summarise it
    Ingest(IngestArgs),
    /// Select one same-author training pair per author
    Mine(MineArgs),
    /// Build one epoch's batch plan
    Plan(PlanArgs),
    /// Train the projection and keep the best validation epoch
    Train(TrainArgs),
    /// Score checkpoints on retrieval tasks
    Eval(EvalArgs),
    /// Run ceiling, batching and cluster-count sweeps
    Ablate(AblateArgs),
    /// Render metric files as tables and a summary record
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Flat key = value file; flags given on the command line win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Output corpus file
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub authors: usize,
    #[arg(long, default_value_t = 6)]
    pub docs_per_author: usize,
    #[arg(long, default_value_t = 4)]
    pub topics: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.6)]
    pub style_weight: f64,
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub topics_per_author: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_WORDS)]
    pub min_words: u64,
    /// Authors moved to validation.jsonl
    #[arg(long, default_value_t = 0)]
    pub validation_authors: usize,
    /// Authors moved to test.jsonl
    #[arg(long, default_value_t = 0)]
    pub test_authors: usize,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = MinerMode::Hard)]
    pub mode: MinerMode,
    #[arg(long, default_value_t = DEFAULT_CEILING)]
    pub ceiling: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_MIN_WORDS)]
    pub min_words: u64,
}

#[derive(Debug, Args, Clone)]
pub struct BatchOpts {
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = DEFAULT_CLUSTERS_PER_BATCH)]
    pub clusters_per_batch: usize,
    #[arg(long, default_value_t = DEFAULT_NEIGHBOR_CAP)]
    pub neighbor_cap: usize,
    #[arg(long, default_value_t = BatchingMode::Hard)]
    pub batching: BatchingMode,
}

#[derive(Debug, Args, Clone)]
pub struct TrainOpts {
    #[arg(long, default_value_t = DEFAULT_EPOCHS)]
    pub epochs: u32,
    #[arg(long, default_value_t = DEFAULT_LEARNING_RATE)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = DEFAULT_TEMPERATURE)]
    pub temperature: f64,
    #[arg(long, default_value_t = DEFAULT_SHARDS_PER_STEP)]
    pub shards_per_step: usize,
    /// Accumulate shard gradients one after another instead of in parallel
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub epoch: u32,
    /// Model whose outputs place the documents; the untrained projection
    /// seeded with --seed otherwise
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub batch: BatchOpts,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Corpus of held-out authors used for epoch selection
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = TaskMode::CrossGenre)]
    pub validation_mode: TaskMode,
    #[arg(long, default_value_t = 7)]
    pub task_seed: u64,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub batch: BatchOpts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoints to score; reports are averaged over them. Without one the
    /// base embeddings are scored as they are.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = TaskMode::ALL.to_vec())]
    pub modes: Vec<TaskMode>,
    #[arg(long, default_value_t = 7)]
    pub task_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Training corpus
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub validation: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Hard-positive ceilings to sweep, one row each
    #[arg(long, value_delimiter = ',')]
    pub ceilings: Vec<f64>,
    /// Add the miner x batching grid at --ceiling
    #[arg(long)]
    pub grid: bool,
    #[arg(long, default_value_t = DEFAULT_CEILING)]
    pub ceiling: f64,
    /// Clusters-per-batch values to sweep with hard positives at --ceiling
    #[arg(long, value_delimiter = ',')]
    pub clusters: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = RUN_SEEDS.to_vec())]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_values_t = TaskMode::ALL.to_vec())]
    pub modes: Vec<TaskMode>,
    #[arg(long, default_value_t = TaskMode::CrossGenre)]
    pub validation_mode: TaskMode,
    #[arg(long, default_value_t = 7)]
    pub task_seed: u64,
    #[arg(long, default_value_t = DEFAULT_MIN_WORDS)]
    pub min_words: u64,
    #[command(flatten)]
    pub train: TrainOpts,
    #[command(flatten)]
    pub batch: BatchOpts,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Metrics, history or ablation files
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Write the summary record here instead of stdout
    #[arg(long)]
    pub summary: Option<PathBuf>,
}
