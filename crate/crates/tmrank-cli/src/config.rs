//! Self-describing pipeline configuration: one JSON file whose fields mirror
//! the command-line flags. Flags override config values; built-in defaults
//! apply last.

use std::path::Path;

use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    // corpus / index
    pub stopwords: Option<String>,
    pub vocab_cap: Option<usize>,
    pub k1: Option<f64>,
    pub b: Option<f64>,
    pub candidate_depth: Option<usize>,

    // bitext
    pub chunk_len: Option<usize>,
    pub symmetrize: Option<bool>,

    // non-parametric model
    pub em_iterations: Option<usize>,
    pub prune_threshold: Option<f64>,
    pub p_self: Option<f64>,
    pub lambda: Option<f64>,

    // neural model
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub lr_decay: Option<f64>,
    pub warmup_frac: Option<f64>,
    pub weight_decay: Option<f64>,
    pub margin: Option<f64>,
    pub negatives_per_query: Option<usize>,
    pub candidate_pool_depth: Option<usize>,
    pub embed_dim: Option<usize>,
    pub proj_dim: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub export_threshold: Option<f64>,

    // fusion / evaluation
    pub fusion_metric: Option<String>,
    pub mrr_cutoff: Option<usize>,
    pub ndcg_k: Option<usize>,
    pub restarts: Option<usize>,

    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

/// flag value, else config value, else default
pub fn pick<T: Clone>(flag: Option<T>, config: Option<T>, default: T) -> T {
    flag.or(config).unwrap_or(default)
}

/// flag value, else config value
pub fn pick_opt<T: Clone>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}
