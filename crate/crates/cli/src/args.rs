use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "gate",
    version,
    about = "Graph attention auto-encoders: train, evaluate, ablate and export"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model and score it with the linear probe.
    Train(RunArgs),
    /// Repeated runs with consecutive seeds; writes results and summary tables.
    Eval(RunArgs),
    /// Every ablation variant over shared seeds.
    Ablate(RunArgs),
    /// Embeddings and averaged attention as TSV.
    ExportEmbeddings(ExportArgs),
    /// Load a dataset directory and compare it with the published statistics.
    ConvertCheck(CheckArgs),
}

/// Every value is optional so that a manifest or the dataset defaults can
/// fill it in.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Canonical dataset directory.
    #[arg(long, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    /// Selects the built-in defaults (cora, citeseer, pubmed).
    #[arg(long, value_name = "NAME")]
    pub dataset_name: Option<String>,
    /// transductive or inductive.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Runs executed concurrently.
    #[arg(long)]
    pub parallel: Option<usize>,
    /// Seed of the first run; run k uses seed + k.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Structure loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Layer widths, comma separated (e.g. 512,512).
    #[arg(long, value_name = "D1,D2,..")]
    pub dims: Option<String>,
    /// identity, sigmoid or tanh.
    #[arg(long)]
    pub activation: Option<String>,
    /// Give the decoder its own parameters.
    #[arg(long)]
    pub untied: bool,
    /// none, A, S or F.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    #[arg(long)]
    pub probe_l2: Option<f64>,
    #[arg(long)]
    pub probe_max_iter: Option<usize>,
    #[arg(long)]
    pub probe_tol: Option<f64>,
    #[arg(long)]
    pub probe_history: Option<usize>,
    /// Run record from an earlier invocation; explicit flags win over it.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Output directory. Nothing is written anywhere else.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Embed with this model instead of training a new one.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Benchmark to compare against; defaults to the name in the metadata.
    #[arg(long, value_name = "NAME")]
    pub dataset_name: Option<String>,
}
