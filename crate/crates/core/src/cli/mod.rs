//! The `fedattn` command line.

mod commands;
mod manifest;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::run;
pub use manifest::RunManifest;

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_IO: i32 = 5;

/// Process exit code for an error, looking through round and client wrappers.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::Config(_) => EXIT_USAGE,
        Error::Format { .. }
        | Error::TooSmall(_)
        | Error::OutOfVocabulary { .. }
        | Error::EmptySequence
        | Error::Decode(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_DATA,
        Error::Divergence { .. } | Error::NonFinite { .. } => EXIT_DIVERGENCE,
        Error::Io(_) | Error::File { .. } | Error::Transport(_) => EXIT_IO,
        _ => EXIT_INTERNAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "fedattn", version, about = "Federated attention-based symptom-to-disease prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shard a one-hot CSV (or a synthetic corpus) into client files.
    PrepareData(PrepareArgs),
    /// Train one model on a single client's shard.
    TrainCentralized(CentralizedArgs),
    /// Run federated rounds over all client shards.
    TrainFederated(FederatedArgs),
    /// Predict a disease and show where the model attended.
    Infer(InferArgs),
    /// Score checkpoints on the pooled test set.
    Evaluate(EvaluateArgs),
    /// Re-run the command recorded in a run manifest and compare artifacts.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// One-hot CSV: a column per symptom, disease in the last column.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Generate a synthetic corpus instead of reading one.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long, default_value_t = 41)]
    pub diseases: usize,
    #[arg(long, default_value_t = 132)]
    pub symptoms: usize,
    #[arg(long, default_value_t = 4920)]
    pub samples: usize,
    /// Number of clients; defaults to the number of --sizes, else 5.
    #[arg(long)]
    pub clients: Option<usize>,
    /// Comma-separated shard sizes; must sum to the number of pairs.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// desk: embed 32, hidden 128; paper: embed 256, hidden 1024.
    #[arg(long, value_enum, default_value_t = PresetArg::Paper)]
    pub preset: PresetArg,
    /// Overrides the preset's hidden size.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Overrides the preset's embedding size.
    #[arg(long)]
    pub embed: Option<usize>,
    /// Attention projection size; defaults to the hidden size.
    #[arg(long)]
    pub attention: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    /// Global gradient-norm clip.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    /// Disable gradient clipping.
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CentralizedArgs {
    /// Directory written by prepare-data.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub client: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Weighted,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransportArg {
    InProcess,
    Socket,
}

#[derive(Debug, Args)]
pub struct FederatedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub rounds: usize,
    #[arg(long, default_value_t = 5)]
    pub local_epochs: usize,
    /// Use only the first K clients of the dataset.
    #[arg(long)]
    pub clients: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Weighted)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = TransportArg::InProcess)]
    pub transport: TransportArg,
    /// Address the socket coordinator binds.
    #[arg(long, default_value = "127.0.0.1:0")]
    pub address: String,
    /// Continue from the last checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// A `.fedw` checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory whose vocabulary the model was trained with.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated symptom names.
    #[arg(long)]
    pub symptoms: String,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    /// Write the attention matrix as JSON here.
    #[arg(long)]
    pub attention_out: Option<PathBuf>,
    /// Print the JSON instead of the heatmap.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to score, as `PATH` or `NAME=PATH`. Repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fresh output directory for the re-run.
    #[arg(long)]
    pub out: PathBuf,
}
