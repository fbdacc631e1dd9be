//! Negative sampling and the ranking training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DocStore, Qrels, TokenSeq};
use crate::error::{Error, Result};
use crate::index::CandidateList;

use super::grad::{compute_gradients, BatchItem};
use super::optim::{adamw_step, lr_at_step, AdamState};
use super::{ModelDims, NeuralM1Params};

/// Hyperparameters of the ranking training run. Network dimensions ride along
/// so a checkpoint is self-describing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub negatives_per_query: usize,
    pub candidate_pool_depth: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub proj_dim: usize,
    pub hidden_dim: usize,
    pub p_self: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 32,
            batch_size: 32,
            base_lr: 3e-3,
            lr_decay: 0.9,
            warmup_frac: 0.10,
            weight_decay: 1e-7,
            margin: 1.0,
            negatives_per_query: 20,
            candidate_pool_depth: 500,
            seed: 0,
            embed_dim: 128,
            proj_dim: 128,
            hidden_dim: 256,
            p_self: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.negatives_per_query == 0 || self.candidate_pool_depth == 0 {
            return Err(Error::InvalidParameter(
                "batch size, negatives and pool depth must be positive".into(),
            ));
        }
        if !(self.base_lr > 0.0 && self.lr_decay > 0.0 && self.margin >= 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter("rates must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.warmup_frac) {
            return Err(Error::InvalidParameter(format!(
                "warmup fraction must be in [0, 0.5], got {}",
                self.warmup_frac
            )));
        }
        if !(0.0 < self.p_self && self.p_self < 1.0) {
            return Err(Error::InvalidParameter("p_self must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One sampled (query, positive doc, negative doc) triple by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainPair {
    pub query_id: String,
    pub pos_doc: String,
    pub neg_doc: String,
}

/// Queries dropped during sampling, by reason.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub no_positive: usize,
    pub no_negative: usize,
}

/// Stable string/seed mixer (FNV-1a core) so sampling does not depend on the
/// standard library's hasher.
fn derive_seed(seed: u64, salt: u64, key: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64
        ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
        ^ salt.wrapping_mul(0xd6e8feb86659fd93);
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per query: fix a seeded, epoch-independent subset of `n_neg` non-relevant
/// documents from the top `pool_depth` candidates, then draw one positive and
/// one negative per epoch (seeded by seed and epoch). Queries without a
/// positive or a negative are skipped and counted.
pub fn sample_pairs(
    qrels: &Qrels,
    candidates: &[CandidateList],
    n_neg: usize,
    pool_depth: usize,
    seed: u64,
    epoch: usize,
) -> (Vec<TrainPair>, SampleStats) {
    let mut stats = SampleStats::default();
    let mut ordered: Vec<&CandidateList> = candidates.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let mut pairs = Vec::new();
    for cand in ordered {
        let qid = &cand.query_id;
        let positives = qrels.relevant_docs(qid);
        if positives.is_empty() {
            stats.no_positive += 1;
            continue;
        }
        let pool: Vec<&str> = cand
            .entries
            .iter()
            .take(pool_depth)
            .map(|(d, _)| d.as_str())
            .filter(|d| !qrels.is_relevant(qid, d))
            .collect();
        if pool.is_empty() {
            stats.no_negative += 1;
            continue;
        }
        // epoch-independent negative subset
        let mut subset: Vec<&str> = pool.clone();
        let mut rng_subset = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x01, qid));
        subset.shuffle(&mut rng_subset);
        subset.truncate(n_neg);

        let mut rng_epoch =
            ChaCha8Rng::seed_from_u64(derive_seed(seed.wrapping_add(epoch as u64), 0x02, qid));
        let pos = positives[rng_epoch.gen_range(0..positives.len())];
        let neg = subset[rng_epoch.gen_range(0..subset.len())];
        pairs.push(TrainPair {
            query_id: qid.clone(),
            pos_doc: pos.to_owned(),
            neg_doc: neg.to_owned(),
        });
    }
    (pairs, stats)
}

/// What a training run produces: the final parameters, the per-epoch mean
/// pair loss, and sampling bookkeeping.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub params: NeuralM1Params,
    pub epoch_losses: Vec<f64>,
    pub sample_stats: SampleStats,
    pub pairs_per_epoch: usize,
}

/// Train the network end-to-end on a ranking objective: per epoch, sample
/// pairs, batch them, take AdamW steps on the summed hinge loss under the
/// warmup/decay schedule. With `epochs == 0` the seeded initialization is
/// returned unchanged.
pub fn train(
    queries: &[(String, TokenSeq)],
    qrels: &Qrels,
    candidates: &[CandidateList],
    store: &DocStore,
    vocab_size: usize,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    config.validate()?;
    let dims = ModelDims {
        vocab: vocab_size,
        embed: config.embed_dim,
        proj: config.proj_dim,
        hidden: config.hidden_dim,
    };
    let mut params = NeuralM1Params::init(dims, config.p_self, config.seed)?;
    let mut state = AdamState::new(&params);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut sample_stats = SampleStats::default();
    let mut pairs_per_epoch = 0;

    let query_tokens: std::collections::HashMap<&str, &TokenSeq> = queries
        .iter()
        .map(|(id, seq)| (id.as_str(), seq))
        .collect();

    for epoch in 0..config.epochs {
        let (sampled, stats) = sample_pairs(
            qrels,
            candidates,
            config.negatives_per_query,
            config.candidate_pool_depth,
            config.seed,
            epoch,
        );
        sample_stats = stats;
        let mut batch_items: Vec<BatchItem> = Vec::with_capacity(sampled.len());
        for pair in &sampled {
            let Some(query) = query_tokens.get(pair.query_id.as_str()) else {
                continue;
            };
            let (Some(pos), Some(neg)) = (store.get(&pair.pos_doc), store.get(&pair.neg_doc))
            else {
                continue;
            };
            if query.is_empty() || pos.is_empty() || neg.is_empty() {
                continue;
            }
            batch_items.push(BatchItem {
                query: (*query).clone(),
                pos: pos.clone(),
                neg: neg.clone(),
            });
        }
        if batch_items.is_empty() {
            epoch_losses.push(0.0);
            continue;
        }
        let mut order_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed.wrapping_add(epoch as u64), 0x03, "order"));
        batch_items.shuffle(&mut order_rng);
        pairs_per_epoch = batch_items.len();

        let steps_per_epoch = batch_items.len().div_ceil(config.batch_size);
        let mut total_loss = 0.0;
        for (step, batch) in batch_items.chunks(config.batch_size).enumerate() {
            let lr = lr_at_step(step, steps_per_epoch, epoch, config);
            let (grads, loss) = compute_gradients(&params, batch, config.margin, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            adamw_step(&mut params, &grads, &mut state, lr, config.weight_decay);
            total_loss += loss;
        }
        epoch_losses.push(total_loss / batch_items.len() as f64);
    }

    Ok(TrainOutput {
        params,
        epoch_losses,
        sample_stats,
        pairs_per_epoch,
    })
}
