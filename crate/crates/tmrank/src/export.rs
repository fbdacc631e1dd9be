//! Sparsify a trained neural model into a translation table for fast CPU
//! scoring: evaluate T(q|d) over the full vocabulary grid, apply
//! self-translation mixing, and keep values at or above a threshold.

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::neural::{mix_self_translation, pair_forward, side_forward, NeuralM1Params};
use crate::parallel;
use crate::translation::TranslationTable;

/// Progress callback: (rows done, rows total).
pub type ProgressFn<'a> = dyn Fn(usize, usize) + Sync + 'a;

/// Materialize the network over every ordered vocabulary pair (q, d), mix in
/// the self-translation probability, and keep entries `>= threshold`. Rows
/// are keyed by the conditioning token d; values are similarities, not a
/// distribution, so the result is unnormalized.
pub fn export_table(
    params: &NeuralM1Params,
    threshold: f64,
    progress: Option<&ProgressFn<'_>>,
) -> Result<TranslationTable> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!(
            "threshold must be in [0, 1), got {threshold}"
        )));
    }
    let vocab = params.dims.vocab;

    // precompute both side stacks once per token
    let q_sides: Vec<Vec<f64>> = (0..vocab)
        .map(|id| side_forward(params.embed_q.row(id), &params.proj_q).map(|s| s.x))
        .collect::<Result<_>>()?;
    let d_sides: Vec<Vec<f64>> = (0..vocab)
        .map(|id| side_forward(params.embed_d.row(id), &params.proj_d).map(|s| s.x))
        .collect::<Result<_>>()?;

    let done = std::sync::atomic::AtomicUsize::new(0);
    let report_every = (vocab / 20).max(1);
    let rows: Vec<Vec<(TokenId, f64)>> = parallel::map_range(vocab, |d| {
        let xd = &d_sides[d];
        let mut row = Vec::new();
        for (q, xq) in q_sides.iter().enumerate() {
            let raw = pair_forward(params, xq, xd).raw;
            let value = mix_self_translation(raw, q == d, params.p_self);
            if value >= threshold {
                row.push((q as TokenId, value));
            }
        }
        if let Some(cb) = progress {
            let n = 1 + done.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            if n % report_every == 0 || n == vocab {
                cb(n, vocab);
            }
        }
        row
    });
    Ok(TranslationTable::from_rows(rows, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenSeq;
    use crate::neural::{score_neural, t_network_forward, ModelDims, TokenInput};

    fn params() -> NeuralM1Params {
        NeuralM1Params::init(
            ModelDims {
                vocab: 3,
                embed: 4,
                proj: 3,
                hidden: 5,
            },
            0.1,
            77,
        )
        .unwrap()
    }

    #[test]
    fn threshold_zero_fills_the_grid() {
        let table = export_table(&params(), 0.0, None).unwrap();
        assert_eq!(table.n_entries(), 9);
    }

    #[test]
    fn default_threshold_keeps_diagonal() {
        let table = export_table(&params(), 1e-4, None).unwrap();
        assert!(table.n_entries() <= 9);
        for d in 0..3u32 {
            assert!(table.get(d, d) >= 1e-4, "diagonal entry {d}");
            assert_eq!(table.get(d, d), 0.1);
        }
    }

    #[test]
    fn exported_values_match_live_network() {
        let p = params();
        let table = export_table(&p, 0.0, None).unwrap();
        for q in 0..3u32 {
            for d in 0..3u32 {
                let live = mix_self_translation(
                    t_network_forward(&p, TokenInput::Id(q), TokenInput::Id(d)).unwrap(),
                    q == d,
                    p.p_self,
                );
                assert!((table.get(q, d) - live).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn export_is_deterministic() {
        let p = params();
        let t1 = export_table(&p, 1e-4, None).unwrap();
        let t2 = export_table(&p, 1e-4, None).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn raising_threshold_never_adds_entries() {
        let p = params();
        let mut prev = usize::MAX;
        for threshold in [0.0, 1e-6, 1e-3, 0.05, 0.3] {
            let t = export_table(&p, threshold, None).unwrap();
            assert!(t.n_entries() <= prev);
            prev = t.n_entries();
        }
    }

    #[test]
    fn table_scoring_matches_live_scoring() {
        let p = params();
        let table = export_table(&p, 0.0, None).unwrap();
        let q = TokenSeq::new(vec![0, 2]);
        let d = TokenSeq::new(vec![1, 1, 2]);
        let live = score_neural(&p, &q, &d, true).unwrap();
        // lambda = 0 reduces the smoothed scorer to the table likelihood
        let doc_unique = d.unique_counts();
        let mut from_table = 0.0;
        for &qt in &q.ids {
            let s = crate::translation::likelihood_grouped(&table, qt, &doc_unique, d.len());
            from_table += s.max(1e-300).ln();
        }
        from_table /= q.len() as f64;
        assert!((live - from_table).abs() < 1e-9);
    }
}
