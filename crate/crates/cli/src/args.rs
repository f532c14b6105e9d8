use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "chainmix", version, about = "Cluster categorical sequences with a mixture of Markov chains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn a check-in CSV into weekly per-user sequences
    Ingest(IngestArgs),
    /// Fit a mixture of Markov chains with EM
    Fit(FitArgs),
    /// Summarize a fitted model: cluster sizes, popularity, top categories
    Report(ReportArgs),
    /// Assign users to clusters and forecast their long-run category mix
    Predict(PredictArgs),
    /// Sample synthetic sequences from a model
    Simulate(SimulateArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Check-in CSV with at least userid, datetime, city, category columns
    #[arg(long)]
    pub input: PathBuf,
    /// Sequence file to write (JSON lines)
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub city: String,
    #[arg(long, default_value = "2009-01-01")]
    pub date_from: String,
    #[arg(long, default_value = "2011-12-31")]
    pub date_to: String,
    #[arg(long, default_value_t = 10)]
    pub min_checkins: usize,
    #[arg(long, default_value_t = 2)]
    pub min_seq_len: usize,
    /// Seed for per-user downsampling
    #[arg(long, env = "CHAINMIX_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated category vocabulary; defaults to the eight Weeplaces categories
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    /// Fail on categories outside the vocabulary instead of skipping them
    #[arg(long)]
    pub strict: bool,
    /// Keep every sequence instead of capping users at the median count
    #[arg(long)]
    pub no_downsample: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub sequences: PathBuf,
    /// Directory for model.json, trace.csv, posteriors.csv and the manifest
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of clusters
    #[arg(short = 'K', long = "clusters", default_value_t = 4)]
    pub clusters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub alpha: f64,
    /// uniform-jitter or random
    #[arg(long, default_value = "uniform-jitter")]
    pub init: String,
    #[arg(long, default_value_t = 0.01)]
    pub jitter_scale: f64,
    #[arg(long, env = "CHAINMIX_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Exit with status 3 when EM stops at --max-iters without converging
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sequences: PathBuf,
    #[arg(long)]
    pub posteriors: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    /// Directory for report.json, report.txt and the manifest
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sequences of the users to assign
    #[arg(long)]
    pub sequences: PathBuf,
    /// Only this user; default is every user in the file
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Also write the predictions as JSON (plus a manifest) here
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Number of sequences
    #[arg(short = 'n', long = "sequences", default_value_t = 1000)]
    pub n_sequences: usize,
    /// Fixed sequence length; overrides --min-len/--max-len
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    #[arg(long, default_value_t = 20)]
    pub max_len: usize,
    #[arg(long, env = "CHAINMIX_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
    /// Ground-truth labels, one per line; default is <output>.labels
    #[arg(long)]
    pub labels: Option<PathBuf>,
}
