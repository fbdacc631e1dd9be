//! Exact reverse-mode gradients of the pairwise margin loss through the
//! translation-probability network.
//!
//! Batches fan out over fixed-size chunks; per-chunk gradients are merged in
//! chunk order so the result does not depend on the worker count.

use std::collections::BTreeMap;

use crate::corpus::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::parallel;
use crate::translation::LIKELIHOOD_FLOOR;

use super::{mix_self_translation, pair_forward, side_forward, Linear, Matrix, NeuralM1Params, PairCache, SideCache};

/// Chunk size for batch gradient accumulation.
const GRAD_CHUNK: usize = 4;

/// One training example: a query with a relevant and a non-relevant document.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub query: TokenSeq,
    pub pos: TokenSeq,
    pub neg: TokenSeq,
}

/// Pairwise margin loss: `max(0, margin - (pos - neg))`. Batch losses are
/// summed, not averaged.
pub fn hinge_loss(pos_score: f64, neg_score: f64, margin: f64) -> f64 {
    (margin - (pos_score - neg_score)).max(0.0)
}

#[derive(Clone, Debug)]
pub struct LinearGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl LinearGrad {
    fn zeros(out_dim: usize, in_dim: usize) -> LinearGrad {
        LinearGrad {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    fn add_assign(&mut self, other: &LinearGrad) {
        for (a, b) in self.weight.data.iter_mut().zip(&other.weight.data) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

/// Gradient of the summed batch loss with respect to every parameter tensor.
/// Embedding gradients are sparse: rows never touched by the batch are absent
/// (their gradient is zero).
#[derive(Clone, Debug)]
pub struct Gradients {
    pub embed_q: BTreeMap<TokenId, Vec<f64>>,
    pub embed_d: BTreeMap<TokenId, Vec<f64>>,
    pub proj_q: LinearGrad,
    pub proj_d: LinearGrad,
    pub f1: LinearGrad,
    pub f2: LinearGrad,
    pub f3: LinearGrad,
}

impl Gradients {
    pub fn zeros(params: &NeuralM1Params) -> Gradients {
        let d = params.dims;
        Gradients {
            embed_q: BTreeMap::new(),
            embed_d: BTreeMap::new(),
            proj_q: LinearGrad::zeros(d.proj, d.embed),
            proj_d: LinearGrad::zeros(d.proj, d.embed),
            f1: LinearGrad::zeros(d.hidden, 3 * d.proj),
            f2: LinearGrad::zeros(d.hidden, d.hidden),
            f3: LinearGrad::zeros(1, d.hidden),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (id, row) in &other.embed_q {
            let dst = self
                .embed_q
                .entry(*id)
                .or_insert_with(|| vec![0.0; row.len()]);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += b;
            }
        }
        for (id, row) in &other.embed_d {
            let dst = self
                .embed_d
                .entry(*id)
                .or_insert_with(|| vec![0.0; row.len()]);
            for (a, b) in dst.iter_mut().zip(row) {
                *a += b;
            }
        }
        self.proj_q.add_assign(&other.proj_q);
        self.proj_d.add_assign(&other.proj_d);
        self.f1.add_assign(&other.f1);
        self.f2.add_assign(&other.f2);
        self.f3.add_assign(&other.f3);
    }

    /// Gradient of a query-side embedding row, if the batch touched it.
    pub fn embed_q_row(&self, id: TokenId) -> Option<&[f64]> {
        self.embed_q.get(&id).map(Vec::as_slice)
    }

    pub fn embed_d_row(&self, id: TokenId) -> Option<&[f64]> {
        self.embed_d.get(&id).map(Vec::as_slice)
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        let scan = |m: &mut f64, xs: &[f64]| {
            for &x in xs {
                *m = m.max(x.abs());
            }
        };
        for row in self.embed_q.values().chain(self.embed_d.values()) {
            scan(&mut m, row);
        }
        for lg in [&self.proj_q, &self.proj_d, &self.f1, &self.f2, &self.f3] {
            scan(&mut m, &lg.weight.data);
            scan(&mut m, &lg.bias);
        }
        m
    }
}

/// Forward caches for one (query, document) scoring, kept for backward.
struct ScoreTrace {
    q_tokens: Vec<(TokenId, u32)>,
    d_tokens: Vec<(TokenId, u32)>,
    q_sides: Vec<SideCache>,
    d_sides: Vec<SideCache>,
    pairs: Vec<PairCache>, // q-major: pairs[qi * d_tokens.len() + di]
    s_per_q: Vec<f64>,
    query_len: usize,
    doc_len: usize,
    score: f64,
}

fn forward_trace(
    params: &NeuralM1Params,
    query: &TokenSeq,
    doc: &TokenSeq,
    use_self_mix: bool,
) -> Result<ScoreTrace> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if doc.is_empty() {
        return Err(Error::EmptySequence);
    }
    let q_tokens = query.unique_counts();
    let d_tokens = doc.unique_counts();
    let q_sides: Vec<SideCache> = q_tokens
        .iter()
        .map(|&(id, _)| side_forward(params.embed_q.row(id as usize), &params.proj_q))
        .collect::<Result<_>>()?;
    let d_sides: Vec<SideCache> = d_tokens
        .iter()
        .map(|&(id, _)| side_forward(params.embed_d.row(id as usize), &params.proj_d))
        .collect::<Result<_>>()?;
    let nd = d_tokens.len();
    let mut pairs = Vec::with_capacity(q_tokens.len() * nd);
    for qi in 0..q_tokens.len() {
        for di in 0..nd {
            pairs.push(pair_forward(params, &q_sides[qi].x, &d_sides[di].x));
        }
    }
    let inv_len = 1.0 / doc.len() as f64;
    let mut s_per_q = Vec::with_capacity(q_tokens.len());
    let mut score = 0.0;
    for (qi, &(q, m_q)) in q_tokens.iter().enumerate() {
        let mut s = 0.0;
        for (di, &(d, tf)) in d_tokens.iter().enumerate() {
            let raw = pairs[qi * nd + di].raw;
            let t = if use_self_mix {
                mix_self_translation(raw, q == d, params.p_self)
            } else {
                raw
            };
            s += t * (tf as f64 * inv_len);
        }
        s_per_q.push(s);
        score += m_q as f64 * s.max(LIKELIHOOD_FLOOR).ln();
    }
    score /= query.len() as f64;
    Ok(ScoreTrace {
        q_tokens,
        d_tokens,
        q_sides,
        d_sides,
        pairs,
        s_per_q,
        query_len: query.len(),
        doc_len: doc.len(),
        score,
    })
}

fn outer_accumulate(grad: &mut LinearGrad, dy: &[f64], x: &[f64]) {
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (w, &xv) in grad.weight.row_mut(r).iter_mut().zip(x) {
            *w += g * xv;
        }
        grad.bias[r] += g;
    }
}

/// Backward through one side stack (project -> tanh -> layer norm) into the
/// projection gradient and the embedding-row gradient.
fn side_backward(
    side: &SideCache,
    proj: &Linear,
    proj_grad: &mut LinearGrad,
    dx: &[f64],
) -> Vec<f64> {
    outer_accumulate(proj_grad, dx, &side.tanh);
    let dt = proj.weight.matvec_transposed(dx);
    let dln: Vec<f64> = dt
        .iter()
        .zip(&side.tanh)
        .map(|(&g, &t)| g * (1.0 - t * t))
        .collect();
    let n = dln.len() as f64;
    let mean_dln = dln.iter().sum::<f64>() / n;
    let mean_dln_y = dln
        .iter()
        .zip(&side.normalized)
        .map(|(&g, &y)| g * y)
        .sum::<f64>()
        / n;
    dln.iter()
        .zip(&side.normalized)
        .map(|(&g, &y)| side.inv_std * (g - mean_dln - y * mean_dln_y))
        .collect()
}

fn pair_backward(
    params: &NeuralM1Params,
    cache: &PairCache,
    xq: &[f64],
    xd: &[f64],
    d_raw: f64,
    grads: &mut Gradients,
    dxq: &mut [f64],
    dxd: &mut [f64],
) {
    let p = params.dims.proj;
    let da3 = d_raw * cache.raw * (1.0 - cache.raw);
    if da3 == 0.0 {
        return;
    }
    grads.f3.bias[0] += da3;
    for (w, &h) in grads.f3.weight.row_mut(0).iter_mut().zip(&cache.h2) {
        *w += da3 * h;
    }
    let dh2: Vec<f64> = params.f3.weight.row(0).iter().map(|&w| w * da3).collect();
    let da2: Vec<f64> = dh2
        .iter()
        .zip(&cache.a2)
        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
        .collect();
    outer_accumulate(&mut grads.f2, &da2, &cache.h1);
    let dh1 = params.f2.weight.matvec_transposed(&da2);
    let da1: Vec<f64> = dh1
        .iter()
        .zip(&cache.a1)
        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
        .collect();
    outer_accumulate(&mut grads.f1, &da1, &cache.z);
    let dz = params.f1.weight.matvec_transposed(&da1);
    for i in 0..p {
        dxq[i] += dz[i] + dz[2 * p + i] * xd[i];
        dxd[i] += dz[p + i] + dz[2 * p + i] * xq[i];
    }
}

/// Backward of `upstream * score` for one scoring trace.
fn backward_trace(
    params: &NeuralM1Params,
    trace: &ScoreTrace,
    use_self_mix: bool,
    upstream: f64,
    grads: &mut Gradients,
) {
    let p = params.dims.proj;
    let nd = trace.d_tokens.len();
    let inv_q = 1.0 / trace.query_len as f64;
    let inv_d = 1.0 / trace.doc_len as f64;
    let mut dxq = vec![vec![0.0f64; p]; trace.q_tokens.len()];
    let mut dxd = vec![vec![0.0f64; p]; trace.d_tokens.len()];

    for (qi, &(q, m_q)) in trace.q_tokens.iter().enumerate() {
        let s = trace.s_per_q[qi];
        if s < LIKELIHOOD_FLOOR {
            continue; // flat region of the floor
        }
        let ds = upstream * m_q as f64 * inv_q / s;
        for (di, &(d, tf)) in trace.d_tokens.iter().enumerate() {
            let dt = ds * tf as f64 * inv_d;
            let d_raw = if use_self_mix {
                if q == d {
                    0.0 // T(t|t) is pinned to p_self
                } else {
                    dt * (1.0 - params.p_self)
                }
            } else {
                dt
            };
            if d_raw == 0.0 {
                continue;
            }
            let (dxq_s, dxd_s) = (&mut dxq[qi], &mut dxd[di]);
            pair_backward(
                params,
                &trace.pairs[qi * nd + di],
                &trace.q_sides[qi].x,
                &trace.d_sides[di].x,
                d_raw,
                grads,
                dxq_s,
                dxd_s,
            );
        }
    }

    for (qi, &(q, _)) in trace.q_tokens.iter().enumerate() {
        if dxq[qi].iter().all(|&v| v == 0.0) {
            continue;
        }
        let dv = side_backward(&trace.q_sides[qi], &params.proj_q, &mut grads.proj_q, &dxq[qi]);
        let row = grads
            .embed_q
            .entry(q)
            .or_insert_with(|| vec![0.0; params.dims.embed]);
        for (a, b) in row.iter_mut().zip(dv) {
            *a += b;
        }
    }
    for (di, &(d, _)) in trace.d_tokens.iter().enumerate() {
        if dxd[di].iter().all(|&v| v == 0.0) {
            continue;
        }
        let dv = side_backward(&trace.d_sides[di], &params.proj_d, &mut grads.proj_d, &dxd[di]);
        let row = grads
            .embed_d
            .entry(d)
            .or_insert_with(|| vec![0.0; params.dims.embed]);
        for (a, b) in row.iter_mut().zip(dv) {
            *a += b;
        }
    }
}

/// Exact gradient of the summed pairwise margin loss over a batch, together
/// with the loss value. Self-translation mixing is part of the trained
/// function. Non-finite forward values are an error.
pub fn compute_gradients(
    params: &NeuralM1Params,
    batch: &[BatchItem],
    margin: f64,
    use_self_mix: bool,
) -> Result<(Gradients, f64)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let partials = parallel::map_chunks(batch, GRAD_CHUNK, |chunk| -> Result<(Gradients, f64)> {
        let mut grads = Gradients::zeros(params);
        let mut loss = 0.0;
        for item in chunk {
            let pos = forward_trace(params, &item.query, &item.pos, use_self_mix)?;
            let neg = forward_trace(params, &item.query, &item.neg, use_self_mix)?;
            if !pos.score.is_finite() || !neg.score.is_finite() {
                return Err(Error::NonFinite("pairwise scores"));
            }
            let l = hinge_loss(pos.score, neg.score, margin);
            if l > 0.0 {
                loss += l;
                backward_trace(params, &pos, use_self_mix, -1.0, &mut grads);
                backward_trace(params, &neg, use_self_mix, 1.0, &mut grads);
            }
        }
        Ok((grads, loss))
    });
    let mut grads = Gradients::zeros(params);
    let mut loss = 0.0;
    for partial in partials {
        let (g, l) = partial?;
        grads.add_assign(&g);
        loss += l;
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("batch loss"));
    }
    Ok((grads, loss))
}

/// Score used by the loss (identical math to the scorer in `neural`, shared
/// caches aside). Exposed for tests and the training loop.
pub fn pair_loss(
    params: &NeuralM1Params,
    item: &BatchItem,
    margin: f64,
    use_self_mix: bool,
) -> Result<f64> {
    let pos = forward_trace(params, &item.query, &item.pos, use_self_mix)?;
    let neg = forward_trace(params, &item.query, &item.neg, use_self_mix)?;
    Ok(hinge_loss(pos.score, neg.score, margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{score_neural, ModelDims, NeuralM1Params};

    fn seq(ids: &[u32]) -> TokenSeq {
        TokenSeq::new(ids.to_vec())
    }

    fn dims() -> ModelDims {
        ModelDims {
            vocab: 6,
            embed: 4,
            proj: 3,
            hidden: 5,
        }
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(2.0, 0.5, 1.0), 0.0);
        assert!((hinge_loss(0.2, 0.0, 1.0) - 0.8).abs() < 1e-12);
        assert_eq!(hinge_loss(0.3, 0.3, 1.0), 1.0);
    }

    #[test]
    fn forward_trace_score_matches_scorer() {
        let params = NeuralM1Params::init(dims(), 0.1, 21).unwrap();
        let q = seq(&[0, 2, 2]);
        let d = seq(&[1, 3, 3, 5]);
        let trace = forward_trace(&params, &q, &d, true).unwrap();
        let direct = score_neural(&params, &q, &d, true).unwrap();
        assert!((trace.score - direct).abs() < 1e-12);
    }

    #[test]
    fn satisfied_margin_gives_zero_gradients() {
        let params = NeuralM1Params::init(dims(), 0.1, 5).unwrap();
        let item = BatchItem {
            query: seq(&[0]),
            pos: seq(&[1, 2]),
            neg: seq(&[3, 4]),
        };
        // margin 0 with distinct scores leaves one side strictly satisfied
        let pos = score_neural(&params, &item.query, &item.pos, true).unwrap();
        let neg = score_neural(&params, &item.query, &item.neg, true).unwrap();
        let margin = (pos - neg) - 0.1; // strictly satisfied
        if margin >= 0.0 {
            let (grads, loss) = compute_gradients(&params, &[item], margin, true).unwrap();
            assert_eq!(loss, 0.0);
            assert_eq!(grads.max_abs(), 0.0);
            assert!(grads.embed_q.is_empty());
        }
    }

    #[test]
    fn repeating_pair_doubles_gradients() {
        let params = NeuralM1Params::init(dims(), 0.1, 9).unwrap();
        let item = BatchItem {
            query: seq(&[0, 1]),
            pos: seq(&[2, 3]),
            neg: seq(&[4, 5]),
        };
        let (g1, l1) = compute_gradients(&params, &[item.clone()], 5.0, true).unwrap();
        let (g2, l2) =
            compute_gradients(&params, &[item.clone(), item], 5.0, true).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
        for (id, row) in &g1.embed_q {
            let doubled = &g2.embed_q[id];
            for (a, b) in row.iter().zip(doubled) {
                assert!((2.0 * a - b).abs() < 1e-12);
            }
        }
        for (a, b) in g1.f1.weight.data.iter().zip(&g2.f1.weight.data) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn untouched_embedding_rows_have_no_gradient() {
        let params = NeuralM1Params::init(dims(), 0.1, 17).unwrap();
        let item = BatchItem {
            query: seq(&[0]),
            pos: seq(&[1]),
            neg: seq(&[2]),
        };
        let (grads, _) = compute_gradients(&params, &[item], 5.0, true).unwrap();
        assert!(grads.embed_q_row(0).is_some());
        assert!(grads.embed_q_row(3).is_none());
        assert!(grads.embed_d_row(1).is_some());
        assert!(grads.embed_d_row(5).is_none());
    }

    /// Central finite differences over every parameter.
    fn finite_difference_check(seed: u64, margin: f64) -> (f64, usize) {
        let h = 1e-5;
        let params = NeuralM1Params::init(dims(), 0.2, seed).unwrap();
        let batch = vec![
            BatchItem {
                query: seq(&[0, 1]),
                pos: seq(&[2, 3, 3]),
                neg: seq(&[4, 5]),
            },
            BatchItem {
                query: seq(&[2]),
                pos: seq(&[0, 5]),
                neg: seq(&[1, 1, 4]),
            },
        ];
        let (grads, _) = compute_gradients(&params, &batch, margin, true).unwrap();

        let loss_of = |p: &NeuralM1Params| -> f64 {
            batch
                .iter()
                .map(|item| pair_loss(p, item, margin, true).unwrap())
                .sum()
        };

        let mut max_rel: f64 = 0.0;
        let mut checked = 0usize;
        let mut check = |analytic: f64, mutate: &mut dyn FnMut(&mut NeuralM1Params, f64)| {
            let mut plus = params.clone();
            mutate(&mut plus, h);
            let mut minus = params.clone();
            mutate(&mut minus, -h);
            let numeric = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            if analytic.abs() > 1e-8 {
                let rel = (numeric - analytic).abs() / analytic.abs();
                max_rel = max_rel.max(rel);
                checked += 1;
            }
        };

        let d = params.dims;
        for row in 0..d.vocab {
            for col in 0..d.embed {
                let gq = grads
                    .embed_q_row(row as u32)
                    .map(|r| r[col])
                    .unwrap_or(0.0);
                check(gq, &mut |p, eps| p.embed_q.row_mut(row)[col] += eps);
                let gd = grads
                    .embed_d_row(row as u32)
                    .map(|r| r[col])
                    .unwrap_or(0.0);
                check(gd, &mut |p, eps| p.embed_d.row_mut(row)[col] += eps);
            }
        }
        for i in 0..grads.f1.weight.data.len() {
            let g = grads.f1.weight.data[i];
            check(g, &mut |p, eps| p.f1.weight.data[i] += eps);
        }
        for i in 0..grads.f3.bias.len() {
            let g = grads.f3.bias[i];
            check(g, &mut |p, eps| p.f3.bias[i] += eps);
        }
        for i in 0..grads.proj_q.weight.data.len() {
            let g = grads.proj_q.weight.data[i];
            check(g, &mut |p, eps| p.proj_q.weight.data[i] += eps);
        }
        (max_rel, checked)
    }

    #[test]
    fn gradients_match_finite_differences() {
        // large margin keeps the hinge active and away from its kink
        let (max_rel, checked) = finite_difference_check(31, 10.0);
        assert!(checked > 20, "too few comparable entries: {checked}");
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }
}
