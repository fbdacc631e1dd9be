//! `tmrank` — pipeline driver: index, retrieve, build-bitext, train-em,
//! train-nn, export, features, fuse-train, rank, evaluate, ttest, gen-synth.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Structured log lines
//! go to standard error; metric reports go to standard output as TSV.

mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => write!(f, "{m}"),
        }
    }
}

impl From<tmrank::Error> for CliError {
    fn from(e: tmrank::Error) -> CliError {
        CliError::Data(e.to_string())
    }
}

/// key=value log line on standard error
pub fn log_event(event: &str, fields: &[(&str, String)]) {
    let mut line = format!("event={event}");
    for (k, v) in fields {
        line.push_str(&format!(" {k}={v}"));
    }
    eprintln!("{line}");
}

#[derive(Parser)]
#[command(
    name = "tmrank",
    version,
    about = "Lexical translation models for retrieval: candidate generation, table training, sparse scoring, fusion, evaluation"
)]
struct Cli {
    /// Random seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads (0 or absent: one per logical CPU)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Base directory for relative input/output paths
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    /// JSON pipeline configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize a collection and build the inverted index
    Index(IndexArgs),
    /// Generate top-k BM25 candidates as a TREC run
    Retrieve(RetrieveArgs),
    /// Pair queries with chunks of their relevant documents
    BuildBitext(BuildBitextArgs),
    /// Train the non-parametric translation table with EM
    TrainEm(TrainEmArgs),
    /// Train the neural translation model on a ranking objective
    TrainNn(TrainNnArgs),
    /// Sparsify a neural checkpoint into a translation table
    Export(ExportArgs),
    /// Compute normalized fusion features for candidates
    Features(FeaturesArgs),
    /// Learn linear fusion weights by coordinate ascent
    FuseTrain(FuseTrainArgs),
    /// Re-rank candidates with fused scores and report throughput
    Rank(RankArgs),
    /// Score a run against qrels
    Evaluate(EvaluateArgs),
    /// Paired two-sided t-test between two runs
    Ttest(TtestArgs),
    /// Generate the synthetic vocabulary-gap benchmark
    GenSynth(GenSynthArgs),
}

#[derive(Args)]
pub struct IndexArgs {
    #[arg(long)]
    collection: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long)]
    vocab_cap: Option<usize>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
}

#[derive(Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "bm25")]
    tag: String,
}

#[derive(Args)]
pub struct BuildBitextArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    out_src: PathBuf,
    #[arg(long)]
    out_tgt: PathBuf,
    #[arg(long)]
    chunk_len: Option<usize>,
    /// Disable pair duplication with swapped sides
    #[arg(long)]
    no_symmetrize: bool,
}

#[derive(Args)]
pub struct TrainEmArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    bitext_src: PathBuf,
    #[arg(long)]
    bitext_tgt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the table in the text interchange format
    #[arg(long)]
    out_text: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    prune_threshold: Option<f64>,
    #[arg(long)]
    vocab_cap: Option<usize>,
    #[arg(long)]
    p_self: Option<f64>,
}

#[derive(Args)]
pub struct TrainNnArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Candidate run computed at depth >= the negative pool depth
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    pool_depth: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    proj: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    p_self: Option<f64>,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the text interchange format (needs --index for surfaces)
    #[arg(long)]
    out_text: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Translation table providing the model1 feature
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value = "model1")]
    feature_name: String,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
pub struct FuseTrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// mrr or ndcg
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
pub struct RankArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value = "model1")]
    feature_name: String,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value = "fused")]
    tag: String,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    /// mrr or ndcg
    #[arg(long)]
    metric: String,
    /// Rank cutoff (mrr) or k (ndcg); always explicit, never defaulted
    #[arg(long)]
    cutoff: usize,
    #[arg(long)]
    qrels: PathBuf,
    /// Optional per-query TSV output path
    #[arg(long)]
    per_query: Option<PathBuf>,
}

#[derive(Args)]
pub struct TtestArgs {
    #[arg(long)]
    run_a: PathBuf,
    #[arg(long)]
    run_b: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    metric: String,
    #[arg(long)]
    cutoff: usize,
}

#[derive(Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    vocab_size: Option<usize>,
    #[arg(long)]
    synonym_pairs: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
}

/// Everything a command needs besides its own flags.
pub struct Ctx {
    pub config: PipelineConfig,
    pub seed: u64,
    pub work_dir: Option<PathBuf>,
}

impl Ctx {
    /// Resolve a path against the work dir when it is relative.
    pub fn path(&self, p: &Path) -> PathBuf {
        match &self.work_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    let threads = cli.threads.or(config.threads).unwrap_or(0);
    tmrank::parallel::configure_threads(threads);
    let ctx = Ctx {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        config,
        work_dir: cli.work_dir.clone(),
    };
    if let Some(dir) = &ctx.work_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    }

    match cli.command {
        Command::Index(args) => commands::index(&ctx, args),
        Command::Retrieve(args) => commands::retrieve(&ctx, args),
        Command::BuildBitext(args) => commands::build_bitext(&ctx, args),
        Command::TrainEm(args) => commands::train_em(&ctx, args),
        Command::TrainNn(args) => commands::train_nn(&ctx, args),
        Command::Export(args) => commands::export(&ctx, args),
        Command::Features(args) => commands::features(&ctx, args),
        Command::FuseTrain(args) => commands::fuse_train(&ctx, args),
        Command::Rank(args) => commands::rank(&ctx, args),
        Command::Evaluate(args) => commands::evaluate(&ctx, args),
        Command::Ttest(args) => commands::ttest(&ctx, args),
        Command::GenSynth(args) => commands::gen_synth(&ctx, args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
