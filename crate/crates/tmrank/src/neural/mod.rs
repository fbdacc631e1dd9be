//! Neural parametrization of the translation probability T(q|d) and the
//! product-of-sums scorer over it.
//!
//! The network consumes a query-side and a document-side token embedding,
//! normalizes and projects each, and feeds the concatenation of the two
//! projections with their Hadamard product through two relu layers and a
//! final linear layer with a sigmoid. Embeddings come either from the model's
//! own tables (token-id path, with self-translation mixing) or from
//! externally supplied per-token vectors (embedding-sequence path).

pub mod grad;
pub mod optim;
pub mod train;

pub use grad::{compute_gradients, hinge_loss, BatchItem, Gradients};
pub use optim::{adamw_step, lr_at_step, AdamState};
pub use train::{sample_pairs, train, SampleStats, TrainConfig, TrainOutput, TrainPair};

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::translation::LIKELIHOOD_FLOOR;

/// Layer-norm stabilizer.
pub const LN_EPS: f64 = 1e-5;

const CKPT_MAGIC: &[u8; 4] = b"NM1C";
const CKPT_VERSION: u32 = 1;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = W x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.row(r)
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum::<f64>()
            })
            .collect()
    }

    /// x = W^T y (used by backward passes)
    pub fn matvec_transposed(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.row(r)) {
                *o += yr * w;
            }
        }
        out
    }
}

/// Fully-connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Linear {
        Linear {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.weight.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        y
    }
}

/// Network shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub proj: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.embed < 2 {
            return Err(Error::InvalidParameter("embedding dim must be >= 2".into()));
        }
        if self.vocab == 0 || self.proj == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter("all dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable tensors plus the fixed self-translation probability.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuralM1Params {
    pub dims: ModelDims,
    pub embed_q: Matrix,
    pub embed_d: Matrix,
    pub proj_q: Linear,
    pub proj_d: Linear,
    pub f1: Linear,
    pub f2: Linear,
    pub f3: Linear,
    pub p_self: f64,
}

fn xavier_uniform(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Matrix {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let mut m = Matrix::zeros(out_dim, in_dim);
    for v in &mut m.data {
        *v = dist.sample(rng);
    }
    m
}

impl NeuralM1Params {
    /// Seeded initialization: embeddings uniform in (-0.05, 0.05), linear
    /// weights Xavier-uniform, biases zero.
    pub fn init(dims: ModelDims, p_self: f64, seed: u64) -> Result<NeuralM1Params> {
        dims.validate()?;
        if !(0.0 < p_self && p_self < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_self must be in (0, 1), got {p_self}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb_dist = Uniform::new(-0.05, 0.05);
        let embed = |rng: &mut ChaCha8Rng| {
            let mut m = Matrix::zeros(dims.vocab, dims.embed);
            for v in &mut m.data {
                *v = emb_dist.sample(rng);
            }
            m
        };
        let embed_q = embed(&mut rng);
        let embed_d = embed(&mut rng);
        let proj_q = Linear {
            weight: xavier_uniform(&mut rng, dims.proj, dims.embed),
            bias: vec![0.0; dims.proj],
        };
        let proj_d = Linear {
            weight: xavier_uniform(&mut rng, dims.proj, dims.embed),
            bias: vec![0.0; dims.proj],
        };
        let f1 = Linear {
            weight: xavier_uniform(&mut rng, dims.hidden, 3 * dims.proj),
            bias: vec![0.0; dims.hidden],
        };
        let f2 = Linear {
            weight: xavier_uniform(&mut rng, dims.hidden, dims.hidden),
            bias: vec![0.0; dims.hidden],
        };
        let f3 = Linear {
            weight: xavier_uniform(&mut rng, 1, dims.hidden),
            bias: vec![0.0; 1],
        };
        Ok(NeuralM1Params {
            dims,
            embed_q,
            embed_d,
            proj_q,
            proj_d,
            f1,
            f2,
            f3,
            p_self,
        })
    }

    /// All-zero parameters (tests; the network then outputs sigmoid(0) = 0.5).
    pub fn zeros(dims: ModelDims, p_self: f64) -> NeuralM1Params {
        NeuralM1Params {
            dims,
            embed_q: Matrix::zeros(dims.vocab, dims.embed),
            embed_d: Matrix::zeros(dims.vocab, dims.embed),
            proj_q: Linear::zeros(dims.proj, dims.embed),
            proj_d: Linear::zeros(dims.proj, dims.embed),
            f1: Linear::zeros(dims.hidden, 3 * dims.proj),
            f2: Linear::zeros(dims.hidden, dims.hidden),
            f3: Linear::zeros(1, dims.hidden),
            p_self,
        }
    }
}

/// Center and scale a vector to zero mean and unit variance (population
/// variance, stabilized with [`LN_EPS`]); no learned gain or bias.
pub fn layer_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::InvalidParameter(
            "layer_normalize requires dim >= 2".into(),
        ));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    Ok(v.iter().map(|x| (x - mean) * inv_std).collect())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // keep the output inside the open interval even for extreme inputs
    s.clamp(1e-300, 1.0 - 1e-15)
}

/// Cached activations of one side stack (normalize -> tanh -> project).
#[derive(Clone, Debug)]
pub(crate) struct SideCache {
    pub normalized: Vec<f64>,
    pub inv_std: f64,
    pub tanh: Vec<f64>,
    pub x: Vec<f64>,
}

pub(crate) fn side_forward(input: &[f64], proj: &Linear) -> Result<SideCache> {
    if input.len() != proj.weight.cols {
        return Err(Error::DimensionMismatch {
            expected: proj.weight.cols,
            got: input.len(),
        });
    }
    let n = input.len() as f64;
    let mean = input.iter().sum::<f64>() / n;
    let var = input.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let normalized: Vec<f64> = input.iter().map(|x| (x - mean) * inv_std).collect();
    let tanh: Vec<f64> = normalized.iter().map(|x| x.tanh()).collect();
    let x = proj.apply(&tanh);
    Ok(SideCache {
        normalized,
        inv_std,
        tanh,
        x,
    })
}

/// Cached activations of the interaction network for one (q, d) pair.
#[derive(Clone, Debug)]
pub(crate) struct PairCache {
    pub z: Vec<f64>,
    pub a1: Vec<f64>,
    pub h1: Vec<f64>,
    pub a2: Vec<f64>,
    pub h2: Vec<f64>,
    pub raw: f64,
}

pub(crate) fn pair_forward(params: &NeuralM1Params, xq: &[f64], xd: &[f64]) -> PairCache {
    let p = params.dims.proj;
    let mut z = Vec::with_capacity(3 * p);
    z.extend_from_slice(xq);
    z.extend_from_slice(xd);
    for i in 0..p {
        z.push(xq[i] * xd[i]);
    }
    let a1 = params.f1.apply(&z);
    let h1: Vec<f64> = a1.iter().map(|&v| v.max(0.0)).collect();
    let a2 = params.f2.apply(&h1);
    let h2: Vec<f64> = a2.iter().map(|&v| v.max(0.0)).collect();
    let a3 = params.f3.apply(&h2)[0];
    PairCache {
        z,
        a1,
        h1,
        a2,
        h2,
        raw: sigmoid(a3),
    }
}

/// Either a vocabulary token or an externally supplied embedding.
#[derive(Clone, Copy, Debug)]
pub enum TokenInput<'a> {
    Id(TokenId),
    Embedding(&'a [f64]),
}

/// Raw network output T(q|d) in (0, 1) before self-translation mixing.
pub fn t_network_forward(
    params: &NeuralM1Params,
    q: TokenInput<'_>,
    d: TokenInput<'_>,
) -> Result<f64> {
    let q_input: &[f64] = match q {
        TokenInput::Id(id) => params.embed_q.row(id as usize),
        TokenInput::Embedding(v) => v,
    };
    let d_input: &[f64] = match d {
        TokenInput::Id(id) => params.embed_d.row(id as usize),
        TokenInput::Embedding(v) => v,
    };
    let sq = side_forward(q_input, &params.proj_q)?;
    let sd = side_forward(d_input, &params.proj_d)?;
    Ok(pair_forward(params, &sq.x, &sd.x).raw)
}

/// Inject the exact-match signal: identical tokens translate with probability
/// `p_self`, all other raw values are scaled by `1 - p_self`.
pub fn mix_self_translation(raw: f64, is_same_token: bool, p_self: f64) -> f64 {
    if is_same_token {
        p_self
    } else {
        (1.0 - p_self) * raw
    }
}

/// T values for the unique tokens of a (query, document) pair, cached so the
/// network runs once per distinct token combination.
pub(crate) struct PairTable {
    q_ids: Vec<TokenId>,
    d_ids: Vec<TokenId>,
    values: Vec<f64>, // q-major
}

impl PairTable {
    pub fn get(&self, q: TokenId, d: TokenId) -> f64 {
        let qi = self.q_ids.binary_search(&q).expect("query token in pair table");
        let di = self.d_ids.binary_search(&d).expect("doc token in pair table");
        self.values[qi * self.d_ids.len() + di]
    }
}

pub(crate) fn pair_table(
    params: &NeuralM1Params,
    query: &TokenSeq,
    doc: &TokenSeq,
    use_self_mix: bool,
) -> Result<PairTable> {
    let mut q_ids: Vec<TokenId> = query.ids.clone();
    q_ids.sort_unstable();
    q_ids.dedup();
    let mut d_ids: Vec<TokenId> = doc.ids.clone();
    d_ids.sort_unstable();
    d_ids.dedup();
    let q_sides: Vec<SideCache> = q_ids
        .iter()
        .map(|&id| side_forward(params.embed_q.row(id as usize), &params.proj_q))
        .collect::<Result<_>>()?;
    let d_sides: Vec<SideCache> = d_ids
        .iter()
        .map(|&id| side_forward(params.embed_d.row(id as usize), &params.proj_d))
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(q_ids.len() * d_ids.len());
    for (qi, &q) in q_ids.iter().enumerate() {
        for (di, &d) in d_ids.iter().enumerate() {
            let raw = pair_forward(params, &q_sides[qi].x, &d_sides[di].x).raw;
            let t = if use_self_mix {
                mix_self_translation(raw, q == d, params.p_self)
            } else {
                raw
            };
            values.push(t);
        }
    }
    Ok(PairTable {
        q_ids,
        d_ids,
        values,
    })
}

/// Translation log-score over token ids: the mean over query tokens of
/// `ln(sum_i T(q|d_i) / |D|)`, summing over all document positions.
pub fn score_neural(
    params: &NeuralM1Params,
    query: &TokenSeq,
    doc: &TokenSeq,
    use_self_mix: bool,
) -> Result<f64> {
    if query.is_empty() {
        return Err(Error::EmptyQuery);
    }
    if doc.is_empty() {
        return Err(Error::EmptySequence);
    }
    let table = pair_table(params, query, doc, use_self_mix)?;
    let inv_len = 1.0 / doc.len() as f64;
    let mut total = 0.0;
    for &q in &query.ids {
        let mut inner = 0.0;
        for &d in &doc.ids {
            inner += table.get(q, d) * inv_len;
        }
        total += inner.max(LIKELIHOOD_FLOOR).ln();
    }
    Ok(total / query.len() as f64)
}

/// Translation log-score over externally supplied embedding sequences
/// (contextualized path). Token identity is unavailable, so no
/// self-translation mixing is applied.
pub fn score_embedding_seqs(
    params: &NeuralM1Params,
    q_embs: &[Vec<f64>],
    d_embs: &[Vec<f64>],
) -> Result<f64> {
    if q_embs.is_empty() || d_embs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let q_sides: Vec<SideCache> = q_embs
        .iter()
        .map(|e| side_forward(e, &params.proj_q))
        .collect::<Result<_>>()?;
    let d_sides: Vec<SideCache> = d_embs
        .iter()
        .map(|e| side_forward(e, &params.proj_d))
        .collect::<Result<_>>()?;
    let inv_len = 1.0 / d_embs.len() as f64;
    let mut total = 0.0;
    for sq in &q_sides {
        let mut inner = 0.0;
        for sd in &d_sides {
            inner += pair_forward(params, &sq.x, &sd.x).raw * inv_len;
        }
        total += inner.max(LIKELIHOOD_FLOOR).ln();
    }
    Ok(total / q_embs.len() as f64)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    vocab: usize,
    embed_dim: usize,
    proj_dim: usize,
    hidden_dim: usize,
    p_self: f64,
    seed: u64,
    config: Option<TrainConfig>,
}

fn tensors_in_order(params: &NeuralM1Params) -> Vec<&[f64]> {
    vec![
        &params.embed_q.data,
        &params.embed_d.data,
        &params.proj_q.weight.data,
        &params.proj_q.bias,
        &params.proj_d.weight.data,
        &params.proj_d.bias,
        &params.f1.weight.data,
        &params.f1.bias,
        &params.f2.weight.data,
        &params.f2.bias,
        &params.f3.weight.data,
        &params.f3.bias,
    ]
}

/// Write a checkpoint: magic, version, JSON header length and bytes, then the
/// raw little-endian f64 tensors in declared order (embed_q, embed_d,
/// proj_q w/b, proj_d w/b, f1 w/b, f2 w/b, f3 w/b).
pub fn save_checkpoint(
    path: &Path,
    params: &NeuralM1Params,
    seed: u64,
    config: Option<&TrainConfig>,
) -> Result<()> {
    let header = CheckpointHeader {
        vocab: params.dims.vocab,
        embed_dim: params.dims.embed,
        proj_dim: params.dims.proj,
        hidden_dim: params.dims.hidden,
        p_self: params.p_self,
        seed,
        config: config.cloned(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let emit = |w: &mut BufWriter<fs::File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| Error::io(path, e))
    };
    emit(&mut w, CKPT_MAGIC)?;
    emit(&mut w, &CKPT_VERSION.to_le_bytes())?;
    emit(&mut w, &(json.len() as u64).to_le_bytes())?;
    emit(&mut w, &json)?;
    for tensor in tensors_in_order(params) {
        for &v in tensor {
            emit(&mut w, &v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(NeuralM1Params, u64, Option<TrainConfig>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(*off..*off + n)
            .ok_or_else(|| Error::bad_format(path, "truncated checkpoint"))?;
        *off += n;
        Ok(s)
    };
    if take(&mut off, 4)? != CKPT_MAGIC {
        return Err(Error::bad_format(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::bad_format(path, format!("unsupported version {version}")));
    }
    let json_len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(&mut off, json_len)?)?;
    let dims = ModelDims {
        vocab: header.vocab,
        embed: header.embed_dim,
        proj: header.proj_dim,
        hidden: header.hidden_dim,
    };
    let mut params = NeuralM1Params::zeros(dims, header.p_self);
    {
        let shapes: Vec<&mut Vec<f64>> = vec![
            &mut params.embed_q.data,
            &mut params.embed_d.data,
            &mut params.proj_q.weight.data,
            &mut params.proj_q.bias,
            &mut params.proj_d.weight.data,
            &mut params.proj_d.bias,
            &mut params.f1.weight.data,
            &mut params.f1.bias,
            &mut params.f2.weight.data,
            &mut params.f2.bias,
            &mut params.f3.weight.data,
            &mut params.f3.bias,
        ];
        for tensor in shapes {
            for v in tensor.iter_mut() {
                *v = f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
            }
        }
    }
    if off != bytes.len() {
        return Err(Error::bad_format(path, "trailing bytes in checkpoint"));
    }
    Ok((params, header.seed, header.config))
}

/// Write an embedding matrix in the binary interchange format:
/// u32 rows, u32 dim, then row-major little-endian f64 values.
pub fn write_embedding_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let dim = rows.first().map(Vec::len).unwrap_or(0);
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(&(rows.len() as u32).to_le_bytes())
        .and_then(|_| w.write_all(&(dim as u32).to_le_bytes()))
        .map_err(|e| Error::io(path, e))?;
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        for &v in row {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read the binary embedding-matrix format (see [`write_embedding_matrix`]).
pub fn read_embedding_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::bad_format(path, "truncated embedding matrix"));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = 8 + rows * dim * 8;
    if bytes.len() != expected {
        return Err(Error::bad_format(
            path,
            format!("expected {expected} bytes for {rows}x{dim}, got {}", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(rows);
    let mut off = 8;
    for _ in 0..rows {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
            off += 8;
        }
        out.push(row);
    }
    Ok(out)
}

/// Read an embedding matrix from text: one row of whitespace-separated
/// decimals per line.
pub fn read_embedding_matrix_text(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let row = row.map_err(|_| Error::parse_line(path, i + 1, "bad float"))?;
        if let Some(first) = out.first() {
            if row.len() != first.len() {
                return Err(Error::parse_line(path, i + 1, "ragged row width"));
            }
        }
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> ModelDims {
        ModelDims {
            vocab: 6,
            embed: 4,
            proj: 3,
            hidden: 5,
        }
    }

    #[test]
    fn layer_normalize_two_elements() {
        let out = layer_normalize(&[1.0, -1.0]).unwrap();
        let expect = 1.0 / (1.0 + LN_EPS).sqrt();
        assert!((out[0] - expect).abs() < 1e-12);
        assert!((out[1] + expect).abs() < 1e-12);
        assert!((out[0] - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn layer_normalize_constant_vector() {
        let out = layer_normalize(&[3.5, 3.5, 3.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn layer_normalize_centers_output() {
        let v: Vec<f64> = (0..9).map(|i| ((i * 37) % 11) as f64 * 0.7 - 2.0).collect();
        let out = layer_normalize(&v).unwrap();
        let mean: f64 = out.iter().sum::<f64>() / out.len() as f64;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn layer_normalize_rejects_short_vectors() {
        assert!(layer_normalize(&[1.0]).is_err());
    }

    #[test]
    fn zero_network_outputs_half() {
        let params = NeuralM1Params::zeros(small_dims(), 0.1);
        for (q, d) in [(0u32, 0u32), (1, 4), (5, 2)] {
            let t = t_network_forward(&params, TokenInput::Id(q), TokenInput::Id(d)).unwrap();
            assert_eq!(t, 0.5);
        }
    }

    #[test]
    fn forward_stays_in_open_unit_interval() {
        let params = NeuralM1Params::init(small_dims(), 0.1, 42).unwrap();
        for q in 0..6u32 {
            for d in 0..6u32 {
                let t = t_network_forward(&params, TokenInput::Id(q), TokenInput::Id(d)).unwrap();
                assert!(t > 0.0 && t < 1.0);
                let mixed = mix_self_translation(t, q == d, params.p_self);
                assert!(mixed > 0.0 && mixed < 1.0);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let params = NeuralM1Params::init(small_dims(), 0.1, 7).unwrap();
        let a = t_network_forward(&params, TokenInput::Id(1), TokenInput::Id(2)).unwrap();
        let b = t_network_forward(&params, TokenInput::Id(1), TokenInput::Id(2)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let params = NeuralM1Params::zeros(small_dims(), 0.1);
        let bad = vec![0.0; 3];
        assert!(matches!(
            t_network_forward(&params, TokenInput::Embedding(&bad), TokenInput::Id(0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn self_mix_examples() {
        assert_eq!(mix_self_translation(0.7, true, 0.1), 0.1);
        assert!((mix_self_translation(0.5, false, 0.1) - 0.45).abs() < 1e-12);
        assert!((mix_self_translation(0.5, false, 1e-12) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn score_neural_matches_hand_computed_average() {
        // D = (d1, d1, d2) with T(q|d1) = 0.6, T(q|d2) = 0.3 -> ln 0.5.
        // A zero network can't produce those values, so check with the
        // all-token arithmetic against a live network instead: duplicate-token
        // averaging must match the grouped computation.
        let params = NeuralM1Params::init(small_dims(), 0.2, 3).unwrap();
        let q = TokenSeq::new(vec![0]);
        let d = TokenSeq::new(vec![1, 1, 2]);
        let t1 = mix_self_translation(
            t_network_forward(&params, TokenInput::Id(0), TokenInput::Id(1)).unwrap(),
            false,
            params.p_self,
        );
        let t2 = mix_self_translation(
            t_network_forward(&params, TokenInput::Id(0), TokenInput::Id(2)).unwrap(),
            false,
            params.p_self,
        );
        let expect = ((2.0 * t1 + t2) / 3.0).ln();
        let score = score_neural(&params, &q, &d, true).unwrap();
        assert!((score - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_network_scores_ln_half() {
        let params = NeuralM1Params::zeros(small_dims(), 0.1);
        let q = TokenSeq::new(vec![0, 3]);
        let d = TokenSeq::new(vec![1, 2, 4]);
        let score = score_neural(&params, &q, &d, false).unwrap();
        assert!((score - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn document_duplication_leaves_score_unchanged() {
        let params = NeuralM1Params::init(small_dims(), 0.1, 11).unwrap();
        let q = TokenSeq::new(vec![0, 5]);
        let d = TokenSeq::new(vec![1, 2, 2, 3]);
        let mut dd = d.ids.clone();
        dd.extend_from_slice(&d.ids);
        let s1 = score_neural(&params, &q, &d, true).unwrap();
        let s2 = score_neural(&params, &q, &TokenSeq::new(dd), true).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn score_is_permutation_invariant() {
        let params = NeuralM1Params::init(small_dims(), 0.1, 13).unwrap();
        let s1 = score_neural(
            &params,
            &TokenSeq::new(vec![0, 1]),
            &TokenSeq::new(vec![2, 3, 4]),
            true,
        )
        .unwrap();
        let s2 = score_neural(
            &params,
            &TokenSeq::new(vec![1, 0]),
            &TokenSeq::new(vec![4, 2, 3]),
            true,
        )
        .unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn embedding_path_matches_id_path_without_self_mix() {
        let params = NeuralM1Params::init(small_dims(), 0.1, 5).unwrap();
        let q_ids = [0u32, 2];
        let d_ids = [1u32, 2, 4];
        let q_embs: Vec<Vec<f64>> = q_ids
            .iter()
            .map(|&i| params.embed_q.row(i as usize).to_vec())
            .collect();
        let d_embs: Vec<Vec<f64>> = d_ids
            .iter()
            .map(|&i| params.embed_d.row(i as usize).to_vec())
            .collect();
        let s_emb = score_embedding_seqs(&params, &q_embs, &d_embs).unwrap();
        let s_id = score_neural(
            &params,
            &TokenSeq::new(q_ids.to_vec()),
            &TokenSeq::new(d_ids.to_vec()),
            false,
        )
        .unwrap();
        assert!((s_emb - s_id).abs() < 1e-12);
    }

    #[test]
    fn single_pair_embedding_score_is_ln_t() {
        let params = NeuralM1Params::init(small_dims(), 0.1, 19).unwrap();
        let qe = params.embed_q.row(1).to_vec();
        let de = params.embed_d.row(3).to_vec();
        let t = t_network_forward(
            &params,
            TokenInput::Embedding(&qe),
            TokenInput::Embedding(&de),
        )
        .unwrap();
        let s = score_embedding_seqs(&params, &[qe], &[de]).unwrap();
        assert!((s - t.ln()).abs() < 1e-12);
    }

    #[test]
    fn embedding_duplication_invariance() {
        let params = NeuralM1Params::init(small_dims(), 0.1, 23).unwrap();
        let qe = vec![params.embed_q.row(0).to_vec()];
        let de: Vec<Vec<f64>> = vec![params.embed_d.row(1).to_vec(), params.embed_d.row(2).to_vec()];
        let mut doubled = de.clone();
        doubled.extend(de.iter().cloned());
        let s1 = score_embedding_seqs(&params, &qe, &de).unwrap();
        let s2 = score_embedding_seqs(&params, &qe, &doubled).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_error() {
        let params = NeuralM1Params::zeros(small_dims(), 0.1);
        assert!(score_neural(&params, &TokenSeq::default(), &TokenSeq::new(vec![0]), true).is_err());
        assert!(score_neural(&params, &TokenSeq::new(vec![0]), &TokenSeq::default(), true).is_err());
        assert!(score_embedding_seqs(&params, &[], &[vec![0.0; 4]]).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let params = NeuralM1Params::init(small_dims(), 0.17, 99).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, 99, None).unwrap();
        let (back, seed, config) = load_checkpoint(&path).unwrap();
        assert_eq!(back, params);
        assert_eq!(seed, 99);
        assert!(config.is_none());
    }

    #[test]
    fn embedding_matrix_roundtrip() {
        let rows = vec![vec![1.0, -2.5, 3.25], vec![0.0, 1e-17, -7.0]];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("embs.bin");
        write_embedding_matrix(&path, &rows).unwrap();
        assert_eq!(read_embedding_matrix(&path).unwrap(), rows);
    }
}
