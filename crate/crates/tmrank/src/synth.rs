//! Synthetic vocabulary-gap benchmark generator.
//!
//! Queries draw terms from a query-term pool; each query's relevant document
//! replaces a query term with its fixed synonym with probability `rho`, so
//! plain term matching degrades as `rho` grows while a translation model can
//! recover the mapping. Every query also shares one common filler token with
//! its relevant document, which keeps the document retrievable (though poorly
//! ranked) even at `rho = 1`.
//!
//! Output files: `collection.tsv`, plus `queries_{train,fusion,test}.tsv` and
//! `qrels_{train,fusion,test}.txt` under the output directory.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub synonym_pairs: usize,
    pub n_queries: usize,
    pub n_docs: usize,
    pub rho: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 720,
            synonym_pairs: 60,
            n_queries: 300,
            n_docs: 2000,
            rho: 0.7,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.synonym_pairs == 0 || self.n_queries == 0 || self.n_docs == 0 {
            return Err(Error::InvalidParameter("sizes must be at least 1".into()));
        }
        if self.vocab_size < 2 * self.synonym_pairs + 10 {
            return Err(Error::InvalidParameter(format!(
                "vocab_size {} too small for {} synonym pairs (need at least {})",
                self.vocab_size,
                self.synonym_pairs,
                2 * self.synonym_pairs + 10
            )));
        }
        if self.n_docs < self.n_queries {
            return Err(Error::InvalidParameter(
                "need at least one document per query".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must be in [0, 1], got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

const QUERY_TERMS_PER_QUERY: usize = 3;
const TERM_REPEATS: usize = 2;
const FILLER_PER_ANSWER: usize = 24;
const FILLER_PER_NOISE: usize = 30;

/// Skewed filler index: low indexes are common, high indexes rare.
fn skewed_index(rng: &mut ChaCha8Rng, n: usize) -> usize {
    let u: f64 = rng.gen();
    ((u * u) * n as f64) as usize % n
}

/// The generated benchmark, before writing to disk.
pub struct SynthData {
    pub collection: Vec<(String, String)>,
    pub queries: Vec<(String, String)>,
    /// (query id, relevant doc id), aligned with `queries`
    pub qrels: Vec<(String, String)>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let p = config.synonym_pairs;
    let n_filler = config.vocab_size - 2 * p;

    let qterm = |i: usize| format!("qt{i:03}");
    let synonym = |i: usize| format!("syn{i:03}");
    let filler = |i: usize| format!("w{i:04}");

    let mut queries = Vec::with_capacity(config.n_queries);
    let mut answer_docs: Vec<String> = Vec::with_capacity(config.n_queries);
    for _ in 0..config.n_queries {
        // distinct query terms
        let mut terms: Vec<usize> = Vec::with_capacity(QUERY_TERMS_PER_QUERY);
        while terms.len() < QUERY_TERMS_PER_QUERY {
            let t = rng.gen_range(0..p);
            if !terms.contains(&t) {
                terms.push(t);
            }
        }
        let anchor = skewed_index(&mut rng, n_filler);
        let mut query_tokens: Vec<String> = terms.iter().map(|&t| qterm(t)).collect();
        query_tokens.push(filler(anchor));
        queries.push(query_tokens.join(" "));

        // relevant document: synonym substitution with probability rho
        let mut doc_tokens: Vec<String> = Vec::new();
        for &t in &terms {
            let surface = if rng.gen::<f64>() < config.rho {
                synonym(t)
            } else {
                qterm(t)
            };
            for _ in 0..TERM_REPEATS {
                doc_tokens.push(surface.clone());
            }
        }
        doc_tokens.push(filler(anchor));
        for _ in 0..FILLER_PER_ANSWER {
            doc_tokens.push(filler(skewed_index(&mut rng, n_filler)));
        }
        doc_tokens.shuffle(&mut rng);
        answer_docs.push(doc_tokens.join(" "));
    }

    // noise documents: filler plus stray synonym-pool terms
    let mut noise_docs = Vec::with_capacity(config.n_docs - config.n_queries);
    for _ in 0..config.n_docs - config.n_queries {
        let mut doc_tokens: Vec<String> = Vec::new();
        for _ in 0..FILLER_PER_NOISE {
            doc_tokens.push(filler(skewed_index(&mut rng, n_filler)));
        }
        doc_tokens.push(synonym(rng.gen_range(0..p)));
        doc_tokens.push(synonym(rng.gen_range(0..p)));
        doc_tokens.push(qterm(rng.gen_range(0..p)));
        doc_tokens.shuffle(&mut rng);
        noise_docs.push(doc_tokens.join(" "));
    }

    // interleave answers and noise by shuffling document positions
    let mut positions: Vec<usize> = (0..config.n_docs).collect();
    positions.shuffle(&mut rng);
    let mut texts: Vec<Option<String>> = vec![None; config.n_docs];
    let mut answer_ids = Vec::with_capacity(config.n_queries);
    for (i, text) in answer_docs.into_iter().enumerate() {
        let pos = positions[i];
        texts[pos] = Some(text);
        answer_ids.push(format!("d{pos:05}"));
    }
    for (j, text) in noise_docs.into_iter().enumerate() {
        let pos = positions[config.n_queries + j];
        texts[pos] = Some(text);
    }
    let collection: Vec<(String, String)> = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| (format!("d{i:05}"), text.expect("all positions filled")))
        .collect();

    let queries: Vec<(String, String)> = queries
        .into_iter()
        .enumerate()
        .map(|(i, text)| (format!("q{i:04}"), text))
        .collect();
    let qrels: Vec<(String, String)> = queries
        .iter()
        .zip(&answer_ids)
        .map(|((qid, _), did)| (qid.clone(), did.clone()))
        .collect();

    Ok(SynthData {
        collection,
        queries,
        qrels,
    })
}

fn write_tsv(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, text) in rows {
        writeln!(w, "{id}\t{text}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_qrels(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (qid, did) in rows {
        writeln!(w, "{qid} 0 {did} 1").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Generate the benchmark and write it with a 50/25/25 train/fusion/test
/// query split.
pub fn gen_synth(config: &SynthConfig, out_dir: &Path) -> Result<()> {
    let data = generate(config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_tsv(&out_dir.join("collection.tsv"), &data.collection)?;

    let n = data.queries.len();
    let train_end = n / 2;
    let fusion_end = train_end + (n - train_end) / 2;
    let splits = [
        ("train", 0..train_end),
        ("fusion", train_end..fusion_end),
        ("test", fusion_end..n),
    ];
    for (name, range) in splits {
        write_tsv(
            &out_dir.join(format!("queries_{name}.tsv")),
            &data.queries[range.clone()],
        )?;
        write_qrels(
            &out_dir.join(format!("qrels_{name}.txt")),
            &data.qrels[range],
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig {
            n_queries: 20,
            n_docs: 60,
            vocab_size: 140,
            synonym_pairs: 10,
            ..SynthConfig::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.collection, b.collection);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.qrels, b.qrels);
    }

    #[test]
    fn rho_zero_keeps_query_terms_verbatim() {
        let config = SynthConfig {
            rho: 0.0,
            n_queries: 10,
            n_docs: 30,
            vocab_size: 140,
            synonym_pairs: 10,
            ..SynthConfig::default()
        };
        let data = generate(&config).unwrap();
        let docs: std::collections::HashMap<&str, &str> = data
            .collection
            .iter()
            .map(|(id, text)| (id.as_str(), text.as_str()))
            .collect();
        for ((_, qtext), (_, did)) in data.queries.iter().zip(&data.qrels) {
            let doc = docs[did.as_str()];
            let doc_tokens: std::collections::HashSet<&str> = doc.split(' ').collect();
            for term in qtext.split(' ') {
                assert!(doc_tokens.contains(term), "{term} missing from {did}");
            }
        }
    }

    #[test]
    fn rho_one_replaces_every_query_term() {
        let config = SynthConfig {
            rho: 1.0,
            n_queries: 10,
            n_docs: 30,
            vocab_size: 140,
            synonym_pairs: 10,
            ..SynthConfig::default()
        };
        let data = generate(&config).unwrap();
        let docs: std::collections::HashMap<&str, &str> = data
            .collection
            .iter()
            .map(|(id, text)| (id.as_str(), text.as_str()))
            .collect();
        for ((_, qtext), (_, did)) in data.queries.iter().zip(&data.qrels) {
            let doc = docs[did.as_str()];
            let doc_tokens: std::collections::HashSet<&str> = doc.split(' ').collect();
            for term in qtext.split(' ').filter(|t| t.starts_with("qt")) {
                assert!(!doc_tokens.contains(term), "{term} leaked into {did}");
            }
            // the filler anchor still connects query and document
            let anchor = qtext.split(' ').find(|t| t.starts_with('w')).unwrap();
            assert!(doc_tokens.contains(anchor));
        }
    }

    #[test]
    fn files_are_written_with_splits() {
        let config = SynthConfig {
            n_queries: 12,
            n_docs: 40,
            vocab_size: 140,
            synonym_pairs: 10,
            ..SynthConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        gen_synth(&config, dir.path()).unwrap();
        for name in [
            "collection.tsv",
            "queries_train.tsv",
            "queries_fusion.tsv",
            "queries_test.tsv",
            "qrels_train.txt",
            "qrels_fusion.txt",
            "qrels_test.txt",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let train = fs::read_to_string(dir.path().join("queries_train.tsv")).unwrap();
        let fusion = fs::read_to_string(dir.path().join("queries_fusion.tsv")).unwrap();
        let test = fs::read_to_string(dir.path().join("queries_test.tsv")).unwrap();
        assert_eq!(train.lines().count(), 6);
        assert_eq!(fusion.lines().count(), 3);
        assert_eq!(test.lines().count(), 3);
    }
}
