//! `qmatch`: build datasets, train matchers, and evaluate rankers.

mod dataset;
mod eval_cmd;
mod settings;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use qmatch::data::Task;
use qmatch::model::Variant;
use qmatch::train::toy_grad_check;

use settings::List;

#[derive(Parser)]
#[command(name = "qmatch", version, about = "Question retrieval and next-question ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build train/dev/test query groups from question pairs or chat logs.
    BuildDataset(BuildArgs),
    /// Train a neural matcher on a built dataset.
    Train(TrainArgs),
    /// Rank the indexed questions for an ad-hoc query.
    Rank(RankArgs),
    /// Evaluate ranking methods on a dataset split.
    Eval(EvalArgs),
    /// Check model gradients against finite differences on a toy problem.
    Gradcheck(GradcheckArgs),
    /// Compare per-query results with paired t-tests.
    Compare(CompareArgs),
}

#[derive(Args)]
pub struct BuildArgs {
    /// Flat key=value file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<Task>,
    /// Question-pair TSV, or a chat log file or directory of logs.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Generate this many synthetic pairs (retrieval) or dialogs (conversation).
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_neg: Option<usize>,
    /// BM25 hits negatives are drawn from.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub max_context: Option<usize>,
    #[arg(long)]
    pub min_question_len: Option<usize>,
    /// Train, dev and test ratios.
    #[arg(long)]
    pub split: Option<List<f64>>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory from `build-dataset`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the checkpoint, vocabulary and history.
    #[arg(long)]
    pub out: PathBuf,
    /// Selects the default hyperparameters; taken from the dataset if absent.
    #[arg(long)]
    pub task: Option<Task>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Filters per convolution width.
    #[arg(long)]
    pub filters: Option<usize>,
    #[arg(long)]
    pub join_hidden: Option<usize>,
    #[arg(long)]
    pub max_query_len: Option<usize>,
    #[arg(long)]
    pub max_cand_len: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Hinge margin.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// L2 weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Word vectors in text format, one `word v1 .. vd` per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub freeze_embeddings: bool,
    /// Words seen at most this often map to the unknown token.
    #[arg(long)]
    pub min_count: Option<u64>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: Option<String>,
    /// Comma-separated: bm25, ql, trlm, vsm, wordcount, wordcount-idf,
    /// avg-embed, neural, combined.
    #[arg(long)]
    pub methods: Option<List<String>>,
    /// Model directory from `train`, for `neural`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Word vectors for `avg-embed`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Method the significance tests compare against.
    #[arg(long)]
    pub reference: Option<String>,
    #[arg(long)]
    pub trlm_iters: Option<usize>,
    #[arg(long)]
    pub trlm_beta: Option<f64>,
    /// Directory for metrics.csv and per-query results.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RankArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub query: String,
    /// bm25 or neural.
    #[arg(long, default_value = "bm25")]
    pub method: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// BM25 hits passed to the neural reranker.
    #[arg(long, default_value_t = 100)]
    pub depth: usize,
}

#[derive(Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value = "lstm_cnn_match")]
    pub variant: Variant,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Per-query result files, as `name=path` or a bare path.
    #[arg(required = true)]
    pub runs: Vec<String>,
    #[arg(long)]
    pub reference: Option<String>,
}

fn gradcheck(args: &GradcheckArgs) -> Result<()> {
    let r = toy_grad_check(args.variant, args.seed)?;
    println!(
        "{}: max relative error {:.3e} over {} components",
        args.variant, r.max_rel_error, r.checked
    );
    if let Some((name, i, analytic, numeric)) = &r.worst {
        log::info!("worst component {name}[{i}]: analytic {analytic:e}, numeric {numeric:e}");
    }
    anyhow::ensure!(
        r.max_rel_error < args.tolerance,
        "gradient check failed: {:.3e} >= {:e}",
        r.max_rel_error,
        args.tolerance
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BuildDataset(a) => dataset::run(a),
        Command::Train(a) => train_cmd::run(a),
        Command::Rank(a) => eval_cmd::rank(a),
        Command::Eval(a) => eval_cmd::eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Compare(a) => eval_cmd::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
