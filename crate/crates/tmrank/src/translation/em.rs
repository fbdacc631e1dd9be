//! Lexical translation probabilities trained with expectation-maximization.
//!
//! This is the classic alignment-free formulation: no empty word, posteriors
//! over actual source tokens only. The E-step fans out over fixed-size chunks
//! of pairs and partial counts are merged in chunk order, so results do not
//! depend on the worker count.

use crate::bitext::ParallelCorpus;
use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::parallel::{self, ACCUM_CHUNK};
use crate::translation::table::TranslationTable;

/// Settings for EM training and table post-processing.
#[derive(Clone, Copy, Debug)]
pub struct EmConfig {
    pub iterations: usize,
    pub prune_threshold: f64,
    pub vocab_cap: usize,
    pub p_self: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            iterations: 5,
            prune_threshold: 1e-3,
            vocab_cap: 1_000_000,
            p_self: 0.1,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.prune_threshold) {
            return Err(Error::InvalidParameter(format!(
                "prune_threshold must be in [0, 1), got {}",
                self.prune_threshold
            )));
        }
        if !(0.0 < self.p_self && self.p_self < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_self must be in (0, 1), got {}",
                self.p_self
            )));
        }
        Ok(())
    }
}

/// Pairs reduced to sorted unique (token, multiplicity) lists; the E-step and
/// likelihood both iterate these in id order for deterministic summation.
struct CompactPair {
    src: Vec<(TokenId, u32)>,
    src_len: usize,
    tgt: Vec<(TokenId, u32)>,
}

fn compact(corpus: &ParallelCorpus) -> Vec<CompactPair> {
    corpus
        .pairs
        .iter()
        .map(|p| CompactPair {
            src: p.src.unique_counts(),
            src_len: p.src.len(),
            tgt: p.tgt.unique_counts(),
        })
        .collect()
}

/// The co-occurrence support: for every conditioning token, the sorted set of
/// target tokens it appears with in some pair. EM probability mass never
/// leaves this support.
fn cooccurrence_rows(corpus: &ParallelCorpus, pairs: &[CompactPair]) -> Vec<Vec<TokenId>> {
    let mut rows: Vec<Vec<TokenId>> = vec![Vec::new(); corpus.vocab_size];
    for pair in pairs {
        for &(d, _) in &pair.src {
            rows[d as usize].extend(pair.tgt.iter().map(|&(q, _)| q));
        }
    }
    for row in &mut rows {
        row.sort_unstable();
        row.dedup();
    }
    rows
}

fn uniform_init(rows: &[Vec<TokenId>]) -> TranslationTable {
    let init: Vec<Vec<(TokenId, f64)>> = rows
        .iter()
        .map(|row| {
            if row.is_empty() {
                Vec::new()
            } else {
                let p = 1.0 / row.len() as f64;
                row.iter().map(|&q| (q, p)).collect()
            }
        })
        .collect();
    TranslationTable::from_rows(init, true)
}

/// One E-step over a chunk of pairs: expected counts aligned with the CSR
/// layout of `table` (entry index -> fractional count).
fn expected_counts_chunk(table: &TranslationTable, chunk: &[CompactPair]) -> Vec<f64> {
    let mut counts = vec![0.0f64; table.n_entries()];
    let mut positions: Vec<(usize, f64, u32)> = Vec::new();
    for pair in chunk {
        for &(q, n_q) in &pair.tgt {
            positions.clear();
            let mut denom = 0.0;
            for &(d, m_d) in &pair.src {
                let (cols, _) = table.row(d);
                if let Ok(i) = cols.binary_search(&q) {
                    let base = entry_offset(table, d, i);
                    let t = table_value(table, base);
                    denom += m_d as f64 * t;
                    positions.push((base, t, m_d));
                }
            }
            if denom <= 0.0 {
                continue;
            }
            for &(base, t, m_d) in &positions {
                counts[base] += n_q as f64 * (m_d as f64 * t) / denom;
            }
        }
    }
    counts
}

fn entry_offset(table: &TranslationTable, d: TokenId, within_row: usize) -> usize {
    table.row_start(d) + within_row
}

fn table_value(table: &TranslationTable, entry: usize) -> f64 {
    table.value_at(entry)
}

/// Train T(q|d) with `iterations` full EM passes over the corpus. Rows come
/// back normalized.
pub fn em_train(corpus: &ParallelCorpus, iterations: usize) -> Result<TranslationTable> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    assert!(iterations >= 1, "iterations must be at least 1");
    let pairs = compact(corpus);
    let rows = cooccurrence_rows(corpus, &pairs);
    let mut table = uniform_init(&rows);

    for _ in 0..iterations {
        let partials = parallel::map_chunks(&pairs, ACCUM_CHUNK, |chunk| {
            expected_counts_chunk(&table, chunk)
        });
        let mut counts = vec![0.0f64; table.n_entries()];
        for partial in partials {
            for (c, p) in counts.iter_mut().zip(partial) {
                *c += p;
            }
        }
        table = maximize(&table, &counts);
    }
    Ok(table)
}

///M-step: normalize expected counts row-wise into probabilities. Rows whose
/// counts are all zero keep their previous values (cannot happen on
/// co-occurrence support, kept as a guard).
fn maximize(table: &TranslationTable, counts: &[f64]) -> TranslationTable {
    let mut rows: Vec<Vec<(TokenId, f64)>> = Vec::with_capacity(table.n_rows());
    for (d, cols, vals) in table.iter_rows() {
        let start = table.row_start(d);
        let total: f64 = counts[start..start + cols.len()].iter().sum();
        if total > 0.0 {
            rows.push(
                cols.iter()
                    .enumerate()
                    .map(|(i, &q)| (q, counts[start + i] / total))
                    .collect(),
            );
        } else {
            rows.push(cols.iter().zip(vals).map(|(&q, &p)| (q, p)).collect());
        }
    }
    TranslationTable::from_rows(rows, true)
}

/// Corpus log-likelihood under a normalized table:
/// sum over pairs and target tokens of ln((1/|src|) * sum_d T(q|d)).
/// The inner sum is floored at 1e-300 to keep the value finite.
pub fn em_log_likelihood(corpus: &ParallelCorpus, table: &TranslationTable) -> f64 {
    let pairs = compact(corpus);
    let partials = parallel::map_chunks(&pairs, ACCUM_CHUNK, |chunk| {
        let mut ll = 0.0f64;
        for pair in chunk {
            let inv_len = 1.0 / pair.src_len as f64;
            for &(q, n_q) in &pair.tgt {
                let mut inner = 0.0;
                for &(d, m_d) in &pair.src {
                    inner += m_d as f64 * table.get(q, d);
                }
                ll += n_q as f64 * (inner * inv_len).max(1e-300).ln();
            }
        }
        ll
    });
    partials.into_iter().sum()
}
