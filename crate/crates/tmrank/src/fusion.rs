//! Normalized feature computation and coordinate-ascent fusion of ranker
//! scores.
//!
//! Features are persisted as TSV (`query_id<TAB>doc_id<TAB>name=value,...`),
//! weights as a JSON name-to-value map.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CollectionStats, DocStore, Qrels, TokenSeq};
use crate::error::{Error, Result};
use crate::index::{Bm25Params, CandidateList, InvertedIndex};
use crate::parallel;
use crate::translation::{model1_log_score_prepared, TranslationTable};

/// Per-query feature rows; every row carries the same named features.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub rows: BTreeMap<String, Vec<FeatureRow>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub doc_id: String,
    pub values: Vec<f64>,
}

/// Named linear fusion weights.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    pub weights: BTreeMap<String, f64>,
}

/// Extra scorer plugged into feature computation, keyed by feature name.
pub trait FeatureScorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, query: &TokenSeq, doc_id: &str) -> f64;
}

/// Smoothed translation log-score as a fusion feature.
pub struct Model1Scorer<'a> {
    pub feature_name: String,
    pub table: &'a TranslationTable,
    pub lambda: f64,
    pub stats: &'a CollectionStats,
    pub store: &'a DocStore,
}

impl FeatureScorer for Model1Scorer<'_> {
    fn name(&self) -> &str {
        &self.feature_name
    }

    fn score(&self, query: &TokenSeq, doc_id: &str) -> f64 {
        match self.store.get(doc_id) {
            Some(doc) => model1_log_score_prepared(
                query,
                &doc.unique_counts(),
                doc.len(),
                self.table,
                self.lambda,
                self.stats,
            ),
            // unknown document: translation mass zero, collection term only
            None => model1_log_score_prepared(query, &[], 0, self.table, self.lambda, self.stats),
        }
    }
}

/// Computes normalized features for candidate documents: `bm25` is the BM25
/// score divided by the summed query-term IDF (zero when that sum is zero),
/// and each registered scorer appends one feature under its own name.
pub struct FeatureComputer<'a> {
    index: &'a InvertedIndex,
    ordinals: HashMap<&'a str, usize>,
    bm25: Bm25Params,
    scorers: Vec<&'a dyn FeatureScorer>,
}

impl<'a> FeatureComputer<'a> {
    pub fn new(index: &'a InvertedIndex, bm25: Bm25Params) -> FeatureComputer<'a> {
        let ordinals = (0..index.n_docs()).map(|o| (index.doc_id(o), o)).collect();
        FeatureComputer {
            index,
            ordinals,
            bm25,
            scorers: Vec::new(),
        }
    }

    pub fn add_scorer(&mut self, scorer: &'a dyn FeatureScorer) {
        self.scorers.push(scorer);
    }

    pub fn feature_names(&self) -> Vec<String> {
        std::iter::once("bm25".to_owned())
            .chain(self.scorers.iter().map(|s| s.name().to_owned()))
            .collect()
    }

    /// Feature rows for one query's candidates, in candidate order.
    pub fn compute(&self, query: &TokenSeq, candidates: &CandidateList) -> Vec<FeatureRow> {
        let sum_idf = self.index.sum_idf(query);
        candidates
            .entries
            .iter()
            .map(|(doc_id, _)| {
                let bm25 = match self.ordinals.get(doc_id.as_str()) {
                    Some(&o) if sum_idf > 0.0 => {
                        self.index.bm25_score(query, o, self.bm25) / sum_idf
                    }
                    _ => 0.0,
                };
                let mut values = Vec::with_capacity(1 + self.scorers.len());
                values.push(bm25);
                for scorer in &self.scorers {
                    values.push(scorer.score(query, doc_id));
                }
                FeatureRow {
                    doc_id: doc_id.clone(),
                    values,
                }
            })
            .collect()
    }

    /// Build the full matrix over many queries, parallel across queries.
    pub fn compute_matrix(
        &self,
        queries: &[(String, TokenSeq)],
        candidates: &[CandidateList],
    ) -> FeatureMatrix {
        let by_id: HashMap<&str, &TokenSeq> =
            queries.iter().map(|(id, seq)| (id.as_str(), seq)).collect();
        let computed = parallel::map_items(candidates, |cand| {
            by_id
                .get(cand.query_id.as_str())
                .map(|query| (cand.query_id.clone(), self.compute(query, cand)))
        });
        let mut rows = BTreeMap::new();
        for entry in computed.into_iter().flatten() {
            rows.insert(entry.0, entry.1);
        }
        FeatureMatrix {
            feature_names: self.feature_names(),
            rows,
        }
    }
}

/// Ranking quality target for fusion training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankMetric {
    Mrr { cutoff: usize },
    NdcgAtK { k: usize },
}

/// Metric of a weighted ranking without materializing the sort:
/// MRR counts documents outranking each relevant one; NDCG selects the top k.
/// Ties rank by ascending doc id, matching the run-file convention.
fn query_metric(
    rows: &[FeatureRow],
    scores: &[f64],
    qrels: &Qrels,
    query_id: &str,
    metric: RankMetric,
) -> f64 {
    match metric {
        RankMetric::Mrr { cutoff } => {
            let mut best_rank = usize::MAX;
            for (i, row) in rows.iter().enumerate() {
                if !qrels.is_relevant(query_id, &row.doc_id) {
                    continue;
                }
                let mut rank = 1usize;
                for (j, other) in rows.iter().enumerate() {
                    if j == i {
                        continue;
                    }
                    if scores[j] > scores[i]
                        || (scores[j] == scores[i] && other.doc_id < row.doc_id)
                    {
                        rank += 1;
                    }
                }
                best_rank = best_rank.min(rank);
            }
            if best_rank <= cutoff {
                1.0 / best_rank as f64
            } else {
                0.0
            }
        }
        RankMetric::NdcgAtK { k } => {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&a, &b| {
                scores[b]
                    .partial_cmp(&scores[a])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| rows[a].doc_id.cmp(&rows[b].doc_id))
            });
            let dcg: f64 = order
                .iter()
                .take(k)
                .enumerate()
                .map(|(pos, &i)| {
                    let grade = qrels.grade(query_id, &rows[i].doc_id).unwrap_or(0) as f64;
                    grade / ((pos + 2) as f64).log2()
                })
                .sum();
            let mut grades: Vec<u32> = qrels
                .judgments(query_id)
                .map(|(_, g)| g)
                .filter(|&g| g > 0)
                .collect();
            grades.sort_unstable_by(|a, b| b.cmp(a));
            let idcg: f64 = grades
                .iter()
                .take(k)
                .enumerate()
                .map(|(pos, &g)| g as f64 / ((pos + 2) as f64).log2())
                .sum();
            if idcg > 0.0 {
                dcg / idcg
            } else {
                0.0
            }
        }
    }
}

/// Mean metric of a weight vector over queries present in the qrels.
fn evaluate_weights(
    features: &FeatureMatrix,
    qrels: &Qrels,
    weights: &[f64],
    metric: RankMetric,
) -> f64 {
    let queries: Vec<(&String, &Vec<FeatureRow>)> = features
        .rows
        .iter()
        .filter(|(qid, _)| qrels.contains_query(qid))
        .collect();
    if queries.is_empty() {
        return 0.0;
    }
    let per_query = parallel::map_items(&queries, |(qid, rows)| {
        let scores: Vec<f64> = rows
            .iter()
            .map(|r| r.values.iter().zip(weights).map(|(v, w)| v * w).sum())
            .collect();
        query_metric(rows.as_slice(), &scores, qrels, qid.as_str(), metric)
    });
    per_query.iter().sum::<f64>() / queries.len() as f64
}

/// Coordinate-ascent settings; the line-search grid is fixed.
#[derive(Clone, Copy, Debug)]
pub struct AscentConfig {
    pub metric: RankMetric,
    pub restarts: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        AscentConfig {
            metric: RankMetric::Mrr { cutoff: 100 },
            restarts: 5,
            seed: 0,
            tolerance: 1e-6,
        }
    }
}

/// Fusion weights with the training metric they achieved.
#[derive(Clone, Debug)]
pub struct AscentOutcome {
    pub weights: FusionWeights,
    pub train_metric: f64,
}

const MULT_GRID: [f64; 6] = [0.5, 0.8, 0.9, 1.1, 1.25, 2.0];
const STEP_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];

/// Learn linear fusion weights maximizing the chosen rank metric. The climber
/// starts from each signed axis and from seeded random vectors, line-searches
/// one coordinate at a time over a multiplicative/additive grid, sweeps until
/// no coordinate improves, and L1-normalizes the best weights found.
pub fn coordinate_ascent(
    features: &FeatureMatrix,
    qrels: &Qrels,
    config: &AscentConfig,
) -> Result<AscentOutcome> {
    let n_features = features.feature_names.len();
    if n_features == 0 || features.rows.is_empty() {
        return Err(Error::NoRelevantCandidates);
    }
    let any_relevant = features.rows.iter().any(|(qid, rows)| {
        rows.iter().any(|r| qrels.is_relevant(qid, &r.doc_id))
    });
    if !any_relevant {
        return Err(Error::NoRelevantCandidates);
    }

    let mut starts: Vec<Vec<f64>> = Vec::new();
    for f in 0..n_features {
        let mut axis = vec![0.0; n_features];
        axis[f] = 1.0;
        starts.push(axis.clone());
        axis[f] = -1.0;
        starts.push(axis);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.restarts {
        starts.push((0..n_features).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }

    let mut best_weights = starts[0].clone();
    let mut best_metric = f64::NEG_INFINITY;

    for start in starts {
        let mut w = start;
        let mut current = evaluate_weights(features, qrels, &w, config.metric);
        loop {
            let mut improved = false;
            for f in 0..n_features {
                let mut w_max = w.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
                if w_max == 0.0 {
                    w_max = 1.0; // degenerate all-zero start
                }
                let base = w[f];
                let mut candidates: Vec<f64> = Vec::with_capacity(16);
                for m in MULT_GRID {
                    candidates.push(base * m);
                }
                for s in STEP_GRID {
                    candidates.push(base + s * w_max);
                    candidates.push(base - s * w_max);
                }
                let mut best_cand = base;
                let mut best_val = current;
                for cand in candidates {
                    if cand == base {
                        continue;
                    }
                    w[f] = cand;
                    let val = evaluate_weights(features, qrels, &w, config.metric);
                    if val > best_val + config.tolerance {
                        best_val = val;
                        best_cand = cand;
                    }
                }
                w[f] = best_cand;
                if best_val > current + config.tolerance {
                    current = best_val;
                    improved = true;
                }
            }
            if !improved {
                break;
            }
        }
        if current > best_metric {
            best_metric = current;
            best_weights = w;
        }
    }

    let norm: f64 = best_weights.iter().map(|w| w.abs()).sum();
    if norm > 0.0 {
        for w in &mut best_weights {
            *w /= norm;
        }
    }
    Ok(AscentOutcome {
        weights: FusionWeights {
            weights: features
                .feature_names
                .iter()
                .cloned()
                .zip(best_weights)
                .collect(),
        },
        train_metric: best_metric,
    })
}

/// Linearly combine features and rank each query's candidates by descending
/// fused score, ties broken by ascending doc id. The weight names must match
/// the feature names exactly.
pub fn fuse_and_rank(features: &FeatureMatrix, weights: &FusionWeights) -> Result<Vec<CandidateList>> {
    for name in weights.weights.keys() {
        if !features.feature_names.contains(name) {
            return Err(Error::UnknownFeature(name.clone()));
        }
    }
    let w: Vec<f64> = features
        .feature_names
        .iter()
        .map(|name| {
            weights
                .weights
                .get(name)
                .copied()
                .ok_or_else(|| Error::UnknownFeature(name.clone()))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(features.rows.len());
    for (query_id, rows) in &features.rows {
        let mut entries: Vec<(String, f64)> = rows
            .iter()
            .map(|r| {
                let score: f64 = r.values.iter().zip(&w).map(|(v, wf)| v * wf).sum();
                (r.doc_id.clone(), score)
            })
            .collect();
        entries.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(&b.0))
        });
        out.push(CandidateList {
            query_id: query_id.clone(),
            entries,
        });
    }
    Ok(out)
}

/// Persist a feature matrix as TSV: `query_id<TAB>doc_id<TAB>name=value,...`
/// with shortest round-trip decimals.
pub fn write_features(features: &FeatureMatrix, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (query_id, rows) in &features.rows {
        for row in rows {
            let cols: Vec<String> = features
                .feature_names
                .iter()
                .zip(&row.values)
                .map(|(name, value)| format!("{name}={value}"))
                .collect();
            writeln!(w, "{query_id}\t{}\t{}", row.doc_id, cols.join(","))
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a feature matrix written by [`write_features`]. Every row must carry
/// the same features in the same order.
pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut names: Option<Vec<String>> = None;
    let mut rows: BTreeMap<String, Vec<FeatureRow>> = BTreeMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::parse_line(path, i + 1, "expected 3 tab-separated fields"));
        }
        let mut row_names = Vec::new();
        let mut values = Vec::new();
        for part in fields[2].split(',') {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::parse_line(path, i + 1, "expected name=value"))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::parse_line(path, i + 1, format!("bad value `{value}`")))?;
            row_names.push(name.to_owned());
            values.push(value);
        }
        match &names {
            None => names = Some(row_names),
            Some(expected) if *expected == row_names => {}
            Some(_) => {
                return Err(Error::parse_line(path, i + 1, "inconsistent feature names"));
            }
        }
        rows.entry(fields[0].to_owned()).or_default().push(FeatureRow {
            doc_id: fields[1].to_owned(),
            values,
        });
    }
    Ok(FeatureMatrix {
        feature_names: names.unwrap_or_default(),
        rows,
    })
}

/// Weights as JSON (`{"bm25": 0.6, "model1": 0.4}`).
pub fn write_weights(weights: &FusionWeights, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(&weights.weights)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_weights(path: &Path) -> Result<FusionWeights> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let weights: BTreeMap<String, f64> = serde_json::from_str(&json)?;
    Ok(FusionWeights { weights })
}
