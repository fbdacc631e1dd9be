//! Command implementations.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tmrank::bitext;
use tmrank::corpus::{self, DocStore, Qrels, TokenSeq, TokenizerConfig, Vocabulary};
use tmrank::eval::{self, RunFile};
use tmrank::export::export_table;
use tmrank::fusion::{
    self, AscentConfig, FeatureComputer, Model1Scorer, RankMetric,
};
use tmrank::index::{load_index, save_index, Bm25Params, CandidateList, InvertedIndex};
use tmrank::neural::{self, TrainConfig};
use tmrank::parallel;
use tmrank::synth::{self, SynthConfig};
use tmrank::translation::{em_log_likelihood, em_train, TranslationTable};

use crate::config::{pick, pick_opt};
use crate::{log_event, CliError, Ctx};
use crate::{
    BuildBitextArgs, EvaluateArgs, ExportArgs, FeaturesArgs, FuseTrainArgs, GenSynthArgs,
    IndexArgs, RankArgs, RetrieveArgs, TrainEmArgs, TrainNnArgs, TtestArgs,
};

fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::data(format!("no such path: {}", path.display())))
    }
}

/// Write through a temp file and rename so re-runs overwrite atomically.
fn atomic_write(path: &Path, write: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    let tmp = path.with_extension(match path.extension() {
        Some(ext) => format!("{}.tmp", ext.to_string_lossy()),
        None => "tmp".to_string(),
    });
    write(&tmp)?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn load_queries(
    path: &Path,
    vocab: &Vocabulary,
) -> Result<Vec<(String, TokenSeq)>, CliError> {
    require_exists(path)?;
    let cfg = TokenizerConfig::with_stopwords(vocab.stopwords().clone());
    Ok(corpus::read_id_text_tsv(path)?
        .into_iter()
        .map(|(id, text)| {
            let tokens = corpus::tokenize(&text, &cfg);
            (id, vocab.encode(&tokens))
        })
        .collect())
}

fn load_run_as_candidates(path: &Path) -> Result<Vec<CandidateList>, CliError> {
    require_exists(path)?;
    Ok(eval::read_run(path)?.to_candidates())
}

fn load_index_dir(path: &Path) -> Result<(InvertedIndex, Vocabulary, Bm25Params), CliError> {
    require_exists(path)?;
    Ok(load_index(path)?)
}

fn metric_from(name: &str, cutoff: usize) -> Result<RankMetric, CliError> {
    match name {
        "mrr" => Ok(RankMetric::Mrr { cutoff }),
        "ndcg" => Ok(RankMetric::NdcgAtK { k: cutoff }),
        other => Err(CliError::usage(format!(
            "unknown metric `{other}` (expected mrr or ndcg)"
        ))),
    }
}

pub fn index(ctx: &Ctx, args: IndexArgs) -> Result<(), CliError> {
    let collection = ctx.path(&args.collection);
    require_exists(&collection)?;
    let out = ctx.path(&args.out);
    let stopword_path = pick_opt(
        args.stopwords.map(|p| ctx.path(&p)),
        ctx.config.stopwords.as_ref().map(PathBuf::from),
    );
    let stopwords: HashSet<String> = match &stopword_path {
        Some(p) => {
            require_exists(p)?;
            corpus::read_stopwords(p)?
        }
        None => HashSet::new(),
    };
    let vocab_cap = pick(args.vocab_cap, ctx.config.vocab_cap, 1_000_000);
    let params = Bm25Params {
        k1: pick(args.k1, ctx.config.k1, 1.2),
        b: pick(args.b, ctx.config.b, 0.75),
    };
    params.validate()?;

    let started = Instant::now();
    let records = corpus::read_id_text_tsv(&collection)?;
    let tokenizer = TokenizerConfig::with_stopwords(stopwords.clone());
    let tokenized: Vec<(String, Vec<String>)> = records
        .into_iter()
        .map(|(id, text)| {
            let toks = corpus::tokenize(&text, &tokenizer);
            (id, toks)
        })
        .collect();
    let vocab = Vocabulary::build(
        tokenized.iter().flat_map(|(_, toks)| toks.iter()),
        vocab_cap,
        &stopwords,
    );
    let mut store = DocStore::new();
    for (id, toks) in &tokenized {
        store.insert(id.clone(), vocab.encode(toks))?;
    }
    let built = InvertedIndex::build(&store, &vocab)?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    save_index(&out, &built, &vocab, params)?;
    log_event(
        "index",
        &[
            ("docs", built.n_docs().to_string()),
            ("vocab", vocab.len().to_string()),
            ("avgdl", format!("{:.2}", built.avg_doc_len())),
            ("elapsed_ms", started.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

pub fn retrieve(ctx: &Ctx, args: RetrieveArgs) -> Result<(), CliError> {
    let (index, vocab, params) = load_index_dir(&ctx.path(&args.index))?;
    let queries = load_queries(&ctx.path(&args.queries), &vocab)?;
    let k = pick(args.k, ctx.config.candidate_depth, 1000);
    if k < 1 {
        return Err(CliError::usage("k must be at least 1".into()));
    }
    let started = Instant::now();
    let lists: Vec<CandidateList> = parallel::map_items(&queries, |(id, seq)| {
        if seq.is_empty() {
            CandidateList {
                query_id: id.clone(),
                entries: Vec::new(),
            }
        } else {
            index.retrieve_topk(id, seq, k, params)
        }
    });
    let run = RunFile::from_candidates(&lists, args.tag);
    let out = ctx.path(&args.out);
    atomic_write(&out, |tmp| Ok(eval::write_run(&run, tmp)?))?;
    log_event(
        "retrieve",
        &[
            ("queries", queries.len().to_string()),
            ("k", k.to_string()),
            ("elapsed_ms", started.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

pub fn build_bitext(ctx: &Ctx, args: BuildBitextArgs) -> Result<(), CliError> {
    let (index, vocab, _) = load_index_dir(&ctx.path(&args.index))?;
    let queries = load_queries(&ctx.path(&args.queries), &vocab)?;
    let qrels_path = ctx.path(&args.qrels);
    require_exists(&qrels_path)?;
    let qrels = corpus::read_qrels(&qrels_path)?;
    let chunk_len = pick(args.chunk_len, ctx.config.chunk_len, 8);
    let symmetrize = if args.no_symmetrize {
        false
    } else {
        ctx.config.symmetrize.unwrap_or(true)
    };
    let store = index.reconstruct_store();
    let (corpus, skips) = bitext::build_bitext(
        &queries,
        &qrels,
        &store,
        vocab.len(),
        chunk_len,
        symmetrize,
    )?;
    let out_src = ctx.path(&args.out_src);
    let out_tgt = ctx.path(&args.out_tgt);
    bitext::write_bitext_text(&corpus, &vocab, &out_src, &out_tgt)?;
    log_event(
        "build-bitext",
        &[
            ("pairs", corpus.len().to_string()),
            ("chunk_len", chunk_len.to_string()),
            ("symmetrize", symmetrize.to_string()),
            ("skipped_docs", skips.missing_docs.to_string()),
            ("skipped_queries", skips.missing_queries.to_string()),
        ],
    );
    Ok(())
}

pub fn train_em(ctx: &Ctx, args: TrainEmArgs) -> Result<(), CliError> {
    let (_, vocab, _) = load_index_dir(&ctx.path(&args.index))?;
    let src = ctx.path(&args.bitext_src);
    let tgt = ctx.path(&args.bitext_tgt);
    require_exists(&src)?;
    require_exists(&tgt)?;
    let corpus = bitext::read_bitext_text(&vocab, &src, &tgt)?;
    let iterations = pick(args.iterations, ctx.config.em_iterations, 5);
    let prune_threshold = pick(args.prune_threshold, ctx.config.prune_threshold, 1e-3);
    let vocab_cap = pick(args.vocab_cap, ctx.config.vocab_cap, 1_000_000);
    let p_self = pick(args.p_self, ctx.config.p_self, 0.1);

    let started = Instant::now();
    let trained = em_train(&corpus, iterations)?;
    let ll = em_log_likelihood(&corpus, &trained);
    // rescale toward self-translation first, then prune (documented order)
    let rescaled = trained.set_self_translation(p_self)?;
    let pruned = rescaled.prune(prune_threshold, vocab_cap);
    let out = ctx.path(&args.out);
    atomic_write(&out, |tmp| Ok(pruned.write_binary(tmp)?))?;
    if let Some(text_out) = &args.out_text {
        let text_out = ctx.path(text_out);
        atomic_write(&text_out, |tmp| Ok(pruned.write_text(&vocab, tmp)?))?;
    }
    log_event(
        "train-em",
        &[
            ("pairs", corpus.len().to_string()),
            ("iterations", iterations.to_string()),
            ("log_likelihood", format!("{ll:.4}")),
            ("entries", pruned.n_entries().to_string()),
            ("elapsed_ms", started.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

pub fn train_nn(ctx: &Ctx, args: TrainNnArgs) -> Result<(), CliError> {
    let (index, vocab, _) = load_index_dir(&ctx.path(&args.index))?;
    let queries = load_queries(&ctx.path(&args.queries), &vocab)?;
    let qrels_path = ctx.path(&args.qrels);
    require_exists(&qrels_path)?;
    let qrels = corpus::read_qrels(&qrels_path)?;
    let candidates = load_run_as_candidates(&ctx.path(&args.candidates))?;
    let store = index.reconstruct_store();
    let cfg = &ctx.config;
    let config = TrainConfig {
        epochs: pick(args.epochs, cfg.epochs, 32),
        batch_size: pick(args.batch_size, cfg.batch_size, 32),
        base_lr: pick(args.lr, cfg.base_lr, 3e-3),
        lr_decay: pick(args.lr_decay, cfg.lr_decay, 0.9),
        warmup_frac: pick(args.warmup, cfg.warmup_frac, 0.10),
        weight_decay: pick(args.weight_decay, cfg.weight_decay, 1e-7),
        margin: pick(args.margin, cfg.margin, 1.0),
        negatives_per_query: pick(args.negatives, cfg.negatives_per_query, 20),
        candidate_pool_depth: pick(args.pool_depth, cfg.candidate_pool_depth, 500),
        seed: ctx.seed,
        embed_dim: pick(args.dim, cfg.embed_dim, 128),
        proj_dim: pick(args.proj, cfg.proj_dim, 128),
        hidden_dim: pick(args.hidden, cfg.hidden_dim, 256),
        p_self: pick(args.p_self, cfg.p_self, 0.1),
    };

    let started = Instant::now();
    let out = neural::train(&queries, &qrels, &candidates, &store, vocab.len(), &config)?;
    let ckpt = ctx.path(&args.out);
    atomic_write(&ckpt, |tmp| {
        Ok(neural::save_checkpoint(tmp, &out.params, config.seed, Some(&config))?)
    })?;
    log_event(
        "train-nn",
        &[
            ("epochs", config.epochs.to_string()),
            ("pairs_per_epoch", out.pairs_per_epoch.to_string()),
            (
                "first_epoch_loss",
                out.epoch_losses.first().map_or("-".into(), |l| format!("{l:.4}")),
            ),
            (
                "last_epoch_loss",
                out.epoch_losses.last().map_or("-".into(), |l| format!("{l:.4}")),
            ),
            ("skipped_no_positive", out.sample_stats.no_positive.to_string()),
            ("skipped_no_negative", out.sample_stats.no_negative.to_string()),
            ("elapsed_ms", started.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

pub fn export(ctx: &Ctx, args: ExportArgs) -> Result<(), CliError> {
    let ckpt_path = ctx.path(&args.checkpoint);
    require_exists(&ckpt_path)?;
    let (params, _, _) = neural::load_checkpoint(&ckpt_path)?;
    let threshold = pick(args.threshold, ctx.config.export_threshold, 1e-4);
    let started = Instant::now();
    let progress = |done: usize, total: usize| {
        log_event(
            "export-progress",
            &[("rows", format!("{done}/{total}"))],
        );
    };
    let table = export_table(&params, threshold, Some(&progress))?;
    let out = ctx.path(&args.out);
    atomic_write(&out, |tmp| Ok(table.write_binary(tmp)?))?;
    if let Some(text_out) = &args.out_text {
        let index_dir = args.index.as_ref().ok_or_else(|| {
            CliError::usage("--out-text requires --index for token surfaces")
        })?;
        let (_, vocab, _) = load_index_dir(&ctx.path(index_dir))?;
        let text_out = ctx.path(text_out);
        atomic_write(&text_out, |tmp| Ok(table.write_text(&vocab, tmp)?))?;
    }
    log_event(
        "export",
        &[
            ("vocab", params.dims.vocab.to_string()),
            ("threshold", threshold.to_string()),
            ("entries", table.n_entries().to_string()),
            ("elapsed_ms", started.elapsed().as_millis().to_string()),
        ],
    );
    Ok(())
}

struct FeatureSetup<'a> {
    computer: FeatureComputer<'a>,
}

fn feature_setup<'a>(
    index: &'a InvertedIndex,
    params: Bm25Params,
    scorer: Option<&'a Model1Scorer<'a>>,
) -> FeatureSetup<'a> {
    let mut computer = FeatureComputer::new(index, params);
    if let Some(s) = scorer {
        computer.add_scorer(s);
    }
    FeatureSetup { computer }
}

pub fn features(ctx: &Ctx, args: FeaturesArgs) -> Result<(), CliError> {
    let (index, vocab, params) = load_index_dir(&ctx.path(&args.index))?;
    let queries = load_queries(&ctx.path(&args.queries), &vocab)?;
    let candidates = load_run_as_candidates(&ctx.path(&args.candidates))?;
    let stats = index.collection_stats();
    let store = index.reconstruct_store();
    let lambda = pick(args.lambda, ctx.config.lambda, 0.1);
    let table = match &args.table {
        Some(p) => {
            let p = ctx.path(p);
            require_exists(&p)?;
            Some(TranslationTable::read_binary(&p)?)
        }
        None => None,
    };
    let scorer = table.as_ref().map(|table| Model1Scorer {
        feature_name: args.feature_name.clone(),
        table,
        lambda,
        stats: &stats,
        store: &store,
    });
    let setup = feature_setup(&index, params, scorer.as_ref());
    let matrix = setup.computer.compute_matrix(&queries, &candidates);
    let out = ctx.path(&args.out);
    atomic_write(&out, |tmp| Ok(fusion::write_features(&matrix, tmp)?))?;
    log_event(
        "features",
        &[
            ("queries", matrix.rows.len().to_string()),
            ("features", matrix.feature_names.join(",")),
        ],
    );
    Ok(())
}

pub fn fuse_train(ctx: &Ctx, args: FuseTrainArgs) -> Result<(), CliError> {
    let features_path = ctx.path(&args.features);
    require_exists(&features_path)?;
    let matrix = fusion::read_features(&features_path)?;
    let qrels_path = ctx.path(&args.qrels);
    require_exists(&qrels_path)?;
    let qrels = corpus::read_qrels(&qrels_path)?;
    let metric_name = pick(
        args.metric,
        ctx.config.fusion_metric.clone(),
        "mrr".to_string(),
    );
    let cutoff = pick(args.cutoff, ctx.config.mrr_cutoff, 100);
    let metric = metric_from(&metric_name, cutoff)?;
    let config = AscentConfig {
        metric,
        restarts: pick(args.restarts, ctx.config.restarts, 5),
        seed: ctx.seed,
        tolerance: 1e-6,
    };
    let outcome = fusion::coordinate_ascent(&matrix, &qrels, &config)?;
    let out = ctx.path(&args.out);
    atomic_write(&out, |tmp| Ok(fusion::write_weights(&outcome.weights, tmp)?))?;
    log_event(
        "fuse-train",
        &[
            ("metric", metric_name),
            ("cutoff", cutoff.to_string()),
            ("train_metric", format!("{:.6}", outcome.train_metric)),
            (
                "weights",
                serde_json::to_string(&outcome.weights.weights).unwrap_or_default(),
            ),
        ],
    );
    Ok(())
}

pub fn rank(ctx: &Ctx, args: RankArgs) -> Result<(), CliError> {
    let (index, vocab, params) = load_index_dir(&ctx.path(&args.index))?;
    let queries = load_queries(&ctx.path(&args.queries), &vocab)?;
    let candidates = load_run_as_candidates(&ctx.path(&args.candidates))?;
    let weights_path = ctx.path(&args.weights);
    require_exists(&weights_path)?;
    let weights = fusion::read_weights(&weights_path)?;
    let stats = index.collection_stats();
    let store = index.reconstruct_store();
    let lambda = pick(args.lambda, ctx.config.lambda, 0.1);
    let table = match &args.table {
        Some(p) => {
            let p = ctx.path(p);
            require_exists(&p)?;
            Some(TranslationTable::read_binary(&p)?)
        }
        None => None,
    };
    let scorer = table.as_ref().map(|table| Model1Scorer {
        feature_name: args.feature_name.clone(),
        table,
        lambda,
        stats: &stats,
        store: &store,
    });
    let setup = feature_setup(&index, params, scorer.as_ref());

    let started = Instant::now();
    let matrix = setup.computer.compute_matrix(&queries, &candidates);
    let ranked = fusion::fuse_and_rank(&matrix, &weights)?;
    let elapsed = started.elapsed();
    let reranked: usize = ranked.iter().map(|c| c.entries.len()).sum();
    let ms_per_1k = if reranked > 0 {
        elapsed.as_secs_f64() * 1000.0 * 1000.0 / reranked as f64
    } else {
        0.0
    };

    let run = RunFile::from_candidates(&ranked, args.tag);
    let out = ctx.path(&args.out);
    atomic_write(&out, |tmp| Ok(eval::write_run(&run, tmp)?))?;
    log_event(
        "rank",
        &[
            ("queries", ranked.len().to_string()),
            ("reranked", reranked.to_string()),
            ("elapsed_ms", format!("{:.3}", elapsed.as_secs_f64() * 1000.0)),
            ("ms_per_1k", format!("{ms_per_1k:.3}")),
        ],
    );
    Ok(())
}

fn per_query_metric(
    run: &RunFile,
    qrels: &Qrels,
    metric: &str,
    cutoff: usize,
) -> Result<eval::MetricReport, CliError> {
    match metric {
        "mrr" => Ok(eval::mrr(run, qrels, cutoff)),
        "ndcg" => Ok(eval::ndcg_at_k(run, qrels, cutoff)),
        other => Err(CliError::usage(format!(
            "unknown metric `{other}` (expected mrr or ndcg)"
        ))),
    }
}

pub fn evaluate(ctx: &Ctx, args: EvaluateArgs) -> Result<(), CliError> {
    let run_path = ctx.path(&args.run);
    require_exists(&run_path)?;
    let run = eval::read_run(&run_path)?;
    let qrels_path = ctx.path(&args.qrels);
    require_exists(&qrels_path)?;
    let qrels = corpus::read_qrels(&qrels_path)?;
    let report = per_query_metric(&run, &qrels, &args.metric, args.cutoff)?;
    let label = match args.metric.as_str() {
        "mrr" => format!("mrr@{}", args.cutoff),
        _ => format!("ndcg@{}", args.cutoff),
    };
    println!("{}", eval::format_metric_report(&label, &report));
    if let Some(per_query) = &args.per_query {
        let out = ctx.path(per_query);
        std::fs::write(&out, eval::format_per_query(&report))
            .map_err(|e| CliError::data(format!("{}: {e}", out.display())))?;
    }
    log_event(
        "evaluate",
        &[
            ("metric", label),
            ("mean", format!("{:.6}", report.mean)),
            ("queries", report.n_queries.to_string()),
            ("excluded", report.excluded.to_string()),
        ],
    );
    Ok(())
}

pub fn ttest(ctx: &Ctx, args: TtestArgs) -> Result<(), CliError> {
    let run_a = eval::read_run(&{
        let p = ctx.path(&args.run_a);
        require_exists(&p)?;
        p
    })?;
    let run_b = eval::read_run(&{
        let p = ctx.path(&args.run_b);
        require_exists(&p)?;
        p
    })?;
    let qrels_path = ctx.path(&args.qrels);
    require_exists(&qrels_path)?;
    let qrels = corpus::read_qrels(&qrels_path)?;
    let a = per_query_metric(&run_a, &qrels, &args.metric, args.cutoff)?;
    let b = per_query_metric(&run_b, &qrels, &args.metric, args.cutoff)?;
    let result = eval::paired_ttest(&a.per_query, &b.per_query)?;
    println!("t\t{:.6}\t{}", result.t, result.n);
    println!("p\t{:.6}\t{}", result.p, result.n);
    log_event(
        "ttest",
        &[
            ("metric", args.metric),
            ("t", format!("{:.6}", result.t)),
            ("p", format!("{:.6}", result.p)),
            ("n", result.n.to_string()),
        ],
    );
    Ok(())
}

pub fn gen_synth(ctx: &Ctx, args: GenSynthArgs) -> Result<(), CliError> {
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        vocab_size: args.vocab_size.unwrap_or(defaults.vocab_size),
        synonym_pairs: args.synonym_pairs.unwrap_or(defaults.synonym_pairs),
        n_queries: args.queries.unwrap_or(defaults.n_queries),
        n_docs: args.docs.unwrap_or(defaults.n_docs),
        rho: args.rho.unwrap_or(defaults.rho),
        seed: ctx.seed,
    };
    let out = ctx.path(&args.out);
    synth::gen_synth(&config, &out)?;
    log_event(
        "gen-synth",
        &[
            ("docs", config.n_docs.to_string()),
            ("queries", config.n_queries.to_string()),
            ("rho", config.rho.to_string()),
            ("seed", config.seed.to_string()),
            ("out", out.display().to_string()),
        ],
    );
    Ok(())
}
