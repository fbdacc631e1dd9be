//! Lexical translation model: EM-trained tables and query-likelihood scoring.

pub mod em;
pub mod table;

pub use em::{em_log_likelihood, em_train, EmConfig};
pub use table::TranslationTable;

use crate::corpus::{CollectionStats, TokenId, TokenSeq};
use crate::error::{Error, Result};

/// Floor applied to per-term likelihoods before taking logs.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

/// A source of translation values T(q|d); implemented by sparse tables and by
/// the neural scorer so the same aggregation code serves both.
pub trait TranslationFn {
    fn t(&self, q: TokenId, d: TokenId) -> f64;
}

impl TranslationFn for TranslationTable {
    fn t(&self, q: TokenId, d: TokenId) -> f64 {
        self.get(q, d)
    }
}

/// Per-query-token likelihood, grouped form: sum over unique document tokens
/// of `T(q|d) * tf(d) / |D|`.
pub fn likelihood_grouped<T: TranslationFn + ?Sized>(
    tfn: &T,
    q: TokenId,
    doc_unique: &[(TokenId, u32)],
    doc_len: usize,
) -> f64 {
    let inv_len = 1.0 / doc_len as f64;
    let mut sum = 0.0;
    for &(d, tf) in doc_unique {
        sum += tfn.t(q, d) * (tf as f64 * inv_len);
    }
    sum
}

/// Per-query-token likelihood, all-token form: sum over document positions of
/// `T(q|d_i) / |D|`.
pub fn likelihood_all_tokens<T: TranslationFn + ?Sized>(
    tfn: &T,
    q: TokenId,
    doc: &TokenSeq,
) -> f64 {
    let inv_len = 1.0 / doc.len() as f64;
    let mut sum = 0.0;
    for &d in &doc.ids {
        sum += tfn.t(q, d) * inv_len;
    }
    sum
}

/// Smoothed translation log-score of a document for a query:
/// the mean over query tokens of
/// `ln((1 - lambda) * sum_d T(q|d) P(d|D) + lambda * P(q|C))`,
/// with `P(d|D)` the in-document maximum-likelihood estimate. The per-term
/// likelihood is floored at [`LIKELIHOOD_FLOOR`]. An empty document is scored
/// from the collection term alone.
pub fn model1_log_score(
    query: &TokenSeq,
    doc: &TokenSeq,
    table: &TranslationTable,
    lambda: f64,
    stats: &CollectionStats,
) -> Result<f64> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be in [0, 1], got {lambda}"
        )));
    }
    let doc_unique = doc.unique_counts();
    Ok(model1_log_score_prepared(
        query,
        &doc_unique,
        doc.len(),
        table,
        lambda,
        stats,
    ))
}

/// [`model1_log_score`] over a pre-aggregated document (unique tokens with
/// multiplicities and total length); the hot path for re-ranking.
pub fn model1_log_score_prepared(
    query: &TokenSeq,
    doc_unique: &[(TokenId, u32)],
    doc_len: usize,
    table: &TranslationTable,
    lambda: f64,
    stats: &CollectionStats,
) -> f64 {
    let mut total = 0.0;
    let mut trans = vec![0.0f64; query.len()];
    if doc_len > 0 {
        let inv_len = 1.0 / doc_len as f64;
        // one row fetch per unique document token, shared by all query tokens
        for &(d, tf) in doc_unique {
            let (cols, vals) = table.row(d);
            if cols.is_empty() {
                continue;
            }
            let weight = tf as f64 * inv_len;
            for (qi, &q) in query.ids.iter().enumerate() {
                if let Ok(i) = cols.binary_search(&q) {
                    trans[qi] += vals[i] * weight;
                }
            }
        }
    }
    for (qi, &q) in query.ids.iter().enumerate() {
        let likelihood = (1.0 - lambda) * trans[qi] + lambda * stats.p_collection(q);
        total += likelihood.max(LIKELIHOOD_FLOOR).ln();
    }
    total / query.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocStore, Vocabulary};
    use std::collections::HashSet;

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec())
    }

    /// stats where every token has P(t|C) = 0.2 (five tokens, two counts each;
    /// ids follow the lexicographic tie-break: a=0, b=1, ...)
    fn fixed_stats() -> CollectionStats {
        let stream = ["a", "a", "b", "b", "c", "c", "d", "d", "e", "e"];
        let vocab = Vocabulary::build(stream, 10, &HashSet::new());
        let mut store = DocStore::new();
        store
            .insert("d", seq(&[0, 0, 1, 1, 2, 2, 3, 3, 4, 4]))
            .unwrap();
        CollectionStats::from_store(&store, &vocab).unwrap()
    }

    #[test]
    fn worked_example_matches_hand_evaluation() {
        // Q = {a}, D = {a, b}, T(a|a) = 0.9, T(a|b) = 0.1, lambda = 0.5,
        // P(a|C) = 0.2 -> ln(0.35)
        let stats = fixed_stats();
        assert!((stats.p_collection(0) - 0.2).abs() < 1e-12);
        let table = TranslationTable::from_rows(
            vec![vec![(0, 0.9)], vec![(0, 0.1)]],
            false,
        );
        let score = model1_log_score(&seq(&[0]), &seq(&[0, 1]), &table, 0.5, &stats).unwrap();
        let expect = (0.5 * (0.9 * 0.5 + 0.1 * 0.5) + 0.5 * 0.2f64).ln();
        assert!((score - expect).abs() < 1e-12);
        assert!((expect - (-1.049822)).abs() < 1e-6);
    }

    #[test]
    fn lambda_one_ignores_table() {
        let stats = fixed_stats();
        let t1 = TranslationTable::from_rows(vec![vec![(0, 0.9)], vec![]], false);
        let t2 = TranslationTable::from_rows(vec![vec![(0, 0.1)], vec![(1, 0.5)]], false);
        let q = seq(&[0, 1]);
        let d = seq(&[0, 1, 1]);
        let s1 = model1_log_score(&q, &d, &t1, 1.0, &stats).unwrap();
        let s2 = model1_log_score(&q, &d, &t2, 1.0, &stats).unwrap();
        assert_eq!(s1, s2);
        let expect = (stats.p_collection(0).ln() + stats.p_collection(1).ln()) / 2.0;
        assert!((s1 - expect).abs() < 1e-12);
    }

    #[test]
    fn query_length_normalization() {
        // two tokens each with likelihood 0.35 score the same as one
        let stats = fixed_stats();
        let table = TranslationTable::from_rows(
            vec![vec![(0, 0.9), (1, 0.1)], vec![(0, 0.1), (1, 0.9)]],
            false,
        );
        // doc {a, b}: either query token sees
        // 0.5*(0.9*0.5 + 0.1*0.5) + 0.5*0.2 = 0.35
        let s1 = model1_log_score(&seq(&[0]), &seq(&[0, 1]), &table, 0.5, &stats).unwrap();
        let s2 = model1_log_score(&seq(&[0, 1]), &seq(&[0, 1]), &table, 0.5, &stats).unwrap();
        assert!((s1 - 0.35f64.ln()).abs() < 1e-12);
        assert!((s2 - s1).abs() < 1e-12);
    }

    #[test]
    fn empty_query_errors() {
        let stats = fixed_stats();
        let table = TranslationTable::from_rows(vec![vec![(0, 1.0)]], true);
        assert!(matches!(
            model1_log_score(&seq(&[]), &seq(&[0]), &table, 0.1, &stats),
            Err(Error::EmptyQuery)
        ));
    }

    #[test]
    fn empty_doc_scores_from_collection_only() {
        let stats = fixed_stats();
        let table = TranslationTable::from_rows(vec![vec![(0, 1.0)], vec![]], true);
        let s = model1_log_score(&seq(&[1]), &seq(&[]), &table, 0.5, &stats).unwrap();
        assert!((s - (0.5 * 0.2f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn score_is_permutation_invariant() {
        let stats = fixed_stats();
        let table = TranslationTable::from_rows(
            vec![vec![(0, 0.3), (1, 0.2)], vec![(0, 0.1), (1, 0.6)]],
            false,
        );
        let s1 = model1_log_score(&seq(&[0, 1]), &seq(&[0, 1, 1, 0]), &table, 0.2, &stats).unwrap();
        let s2 = model1_log_score(&seq(&[1, 0]), &seq(&[1, 1, 0, 0]), &table, 0.2, &stats).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn raising_translation_probability_never_lowers_score() {
        let stats = fixed_stats();
        let q = seq(&[0]);
        let d = seq(&[1, 1, 0]);
        let mut prev = f64::NEG_INFINITY;
        for step in 1..=5 {
            let p = 0.1 * step as f64;
            let table =
                TranslationTable::from_rows(vec![vec![(0, 0.05)], vec![(0, p)]], false);
            let s = model1_log_score(&q, &d, &table, 0.3, &stats).unwrap();
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn grouped_and_all_token_forms_agree() {
        let table = TranslationTable::from_rows(
            vec![vec![(0, 0.6), (1, 0.3)], vec![(0, 0.1)], vec![(1, 0.25)]],
            false,
        );
        let doc = seq(&[0, 0, 1, 2, 0, 2]);
        let unique = doc.unique_counts();
        for q in 0..2u32 {
            let a = likelihood_grouped(&table, q, &unique, doc.len());
            let b = likelihood_all_tokens(&table, q, &doc);
            let rel = (a - b).abs() / a.abs().max(1e-300);
            assert!(rel < 1e-12, "q={q}: {a} vs {b}");
        }
    }
}
