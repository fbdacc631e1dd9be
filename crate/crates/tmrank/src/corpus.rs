//! Text ingestion, tokenization, vocabulary construction, and collection
//! statistics.
//!
//! File formats:
//! - collection / queries: UTF-8 TSV, one record per line, `id<TAB>text`
//! - qrels: TREC format, whitespace separated, `query_id 0 doc_id grade`
//! - stopwords: one token per line, `#` starts a comment line

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

/// Dense index into a [`Vocabulary`].
pub type TokenId = u32;

/// Collection probability returned for out-of-vocabulary tokens.
pub const OOV_PROB: f64 = 1e-9;

/// An ordered sequence of token ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct TokenSeq {
    pub ids: Vec<TokenId>,
}

impl TokenSeq {
    pub fn new(ids: Vec<TokenId>) -> Self {
        TokenSeq { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.ids
    }

    /// Unique token ids with their multiplicities, ascending by id.
    pub fn unique_counts(&self) -> Vec<(TokenId, u32)> {
        let mut sorted = self.ids.clone();
        sorted.sort_unstable();
        let mut out: Vec<(TokenId, u32)> = Vec::new();
        for id in sorted {
            match out.last_mut() {
                Some((last, n)) if *last == id => *n += 1,
                _ => out.push((id, 1)),
            }
        }
        out
    }
}

impl From<Vec<TokenId>> for TokenSeq {
    fn from(ids: Vec<TokenId>) -> Self {
        TokenSeq { ids }
    }
}

/// Tokenizer settings. The rule set is fixed (Unicode lowercasing, splitting
/// on non-alphanumeric boundaries); stopword removal is configurable.
#[derive(Clone, Debug, Default)]
pub struct TokenizerConfig {
    pub stopwords: HashSet<String>,
}

impl TokenizerConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stopwords(stopwords: HashSet<String>) -> Self {
        TokenizerConfig { stopwords }
    }
}

/// Lowercase `text` and split it on non-alphanumeric Unicode boundaries,
/// dropping any configured stopwords. Empty input yields an empty list.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !config.stopwords.contains(*t))
        .map(str::to_owned)
        .collect()
}

/// A dense token universe: ids are assigned in descending corpus frequency,
/// ties broken lexicographically.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    surfaces: Vec<String>,
    frequencies: Vec<u64>,
    stopwords: HashSet<String>,
}

impl Vocabulary {
    /// Build a vocabulary from a token stream, keeping the `cap` most
    /// frequent non-stopword tokens.
    pub fn build<I, S>(stream: I, cap: usize, stopwords: &HashSet<String>) -> Vocabulary
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        assert!(cap >= 1, "vocabulary cap must be at least 1");
        let mut counts: HashMap<String, u64> = HashMap::new();
        for tok in stream {
            let tok = tok.as_ref();
            if stopwords.contains(tok) {
                continue;
            }
            *counts.entry(tok.to_owned()).or_insert(0) += 1;
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap);

        let mut token_to_id = HashMap::with_capacity(ranked.len());
        let mut surfaces = Vec::with_capacity(ranked.len());
        let mut frequencies = Vec::with_capacity(ranked.len());
        for (id, (surface, freq)) in ranked.into_iter().enumerate() {
            token_to_id.insert(surface.clone(), id as TokenId);
            surfaces.push(surface);
            frequencies.push(freq);
        }
        Vocabulary {
            token_to_id,
            surfaces,
            frequencies,
            stopwords: stopwords.clone(),
        }
    }

    /// Reconstruct a vocabulary from parallel surface/frequency lists,
    /// e.g. when loading a persisted index. Order defines the ids.
    pub fn from_entries(entries: Vec<(String, u64)>, stopwords: HashSet<String>) -> Vocabulary {
        let mut token_to_id = HashMap::with_capacity(entries.len());
        let mut surfaces = Vec::with_capacity(entries.len());
        let mut frequencies = Vec::with_capacity(entries.len());
        for (id, (surface, freq)) in entries.into_iter().enumerate() {
            token_to_id.insert(surface.clone(), id as TokenId);
            surfaces.push(surface);
            frequencies.push(freq);
        }
        Vocabulary {
            token_to_id,
            surfaces,
            frequencies,
            stopwords,
        }
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.surfaces.get(id as usize).map(String::as_str)
    }

    pub fn frequency(&self, id: TokenId) -> u64 {
        self.frequencies.get(id as usize).copied().unwrap_or(0)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, u64)> {
        self.surfaces
            .iter()
            .map(String::as_str)
            .zip(self.frequencies.iter().copied())
    }

    /// Map surface tokens to ids, silently dropping out-of-vocabulary tokens.
    pub fn encode(&self, tokens: &[String]) -> TokenSeq {
        TokenSeq::new(tokens.iter().filter_map(|t| self.id_of(t)).collect())
    }

    /// Surface forms for a sequence of ids; unknown ids render as `<unk>`.
    pub fn decode(&self, seq: &TokenSeq) -> Vec<&str> {
        seq.ids
            .iter()
            .map(|&id| self.surface(id).unwrap_or("<unk>"))
            .collect()
    }
}

/// Insertion-ordered map from document id to token sequence.
#[derive(Clone, Debug, Default)]
pub struct DocStore {
    doc_ids: Vec<String>,
    docs: Vec<TokenSeq>,
    ordinals: HashMap<String, usize>,
}

impl DocStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc_id: impl Into<String>, seq: TokenSeq) -> Result<()> {
        let doc_id = doc_id.into();
        if self.ordinals.contains_key(&doc_id) {
            return Err(Error::DuplicateDocId(doc_id));
        }
        self.ordinals.insert(doc_id.clone(), self.docs.len());
        self.doc_ids.push(doc_id);
        self.docs.push(seq);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&TokenSeq> {
        self.ordinals.get(doc_id).map(|&o| &self.docs[o])
    }

    pub fn ordinal_of(&self, doc_id: &str) -> Option<usize> {
        self.ordinals.get(doc_id).copied()
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn doc(&self, ordinal: usize) -> &TokenSeq {
        &self.docs[ordinal]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TokenSeq)> {
        self.doc_ids
            .iter()
            .map(String::as_str)
            .zip(self.docs.iter())
    }
}

/// Unigram statistics of an indexed collection.
#[derive(Clone, Debug)]
pub struct CollectionStats {
    total_tokens: u64,
    token_counts: Vec<u64>,
    doc_freqs: Vec<u32>,
    avg_doc_len: f64,
    n_docs: usize,
}

impl CollectionStats {
    /// Compute statistics over a store. Token counts are indexed by token id;
    /// the store is assumed to contain only in-vocabulary ids.
    pub fn from_store(store: &DocStore, vocab: &Vocabulary) -> Result<CollectionStats> {
        if store.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let mut token_counts = vec![0u64; vocab.len()];
        let mut doc_freqs = vec![0u32; vocab.len()];
        let mut total_tokens = 0u64;
        let mut total_len = 0u64;
        let mut seen: HashSet<TokenId> = HashSet::new();
        for (_, seq) in store.iter() {
            total_len += seq.len() as u64;
            seen.clear();
            for &id in &seq.ids {
                token_counts[id as usize] += 1;
                total_tokens += 1;
                if seen.insert(id) {
                    doc_freqs[id as usize] += 1;
                }
            }
        }
        Ok(CollectionStats {
            total_tokens,
            token_counts,
            doc_freqs,
            avg_doc_len: total_len as f64 / store.len() as f64,
            n_docs: store.len(),
        })
    }

    /// Rebuild statistics from per-token counts and document data (used when
    /// loading a persisted index).
    pub fn from_parts(token_counts: Vec<u64>, doc_freqs: Vec<u32>, avg_doc_len: f64, n_docs: usize) -> CollectionStats {
        let total_tokens = token_counts.iter().sum();
        CollectionStats {
            total_tokens,
            token_counts,
            doc_freqs,
            avg_doc_len,
            n_docs,
        }
    }

    /// Maximum-likelihood collection probability of a token. Out-of-vocabulary
    /// ids (and tokens never seen in this collection) fall back to [`OOV_PROB`].
    pub fn p_collection(&self, id: TokenId) -> f64 {
        match self.token_counts.get(id as usize) {
            Some(&c) if c > 0 => c as f64 / self.total_tokens as f64,
            _ => OOV_PROB,
        }
    }

    pub fn count(&self, id: TokenId) -> u64 {
        self.token_counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn doc_freq(&self, id: TokenId) -> u32 {
        self.doc_freqs.get(id as usize).copied().unwrap_or(0)
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn vocab_size(&self) -> usize {
        self.token_counts.len()
    }
}

/// Graded relevance judgments keyed by (query id, doc id).
#[derive(Clone, Debug, Default)]
pub struct Qrels {
    grades: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.grades
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.grades.get(query_id).and_then(|m| m.get(doc_id)).copied()
    }

    /// A document counts as relevant when its grade is at least 1.
    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.grade(query_id, doc_id).map_or(false, |g| g >= 1)
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.grades.contains_key(query_id)
    }

    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }

    /// Judged documents of a query in ascending doc-id order.
    pub fn judgments(&self, query_id: &str) -> impl Iterator<Item = (&str, u32)> {
        self.grades
            .get(query_id)
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, &g)| (d.as_str(), g)))
    }

    /// Relevant (grade >= 1) doc ids of a query, ascending.
    pub fn relevant_docs(&self, query_id: &str) -> Vec<&str> {
        self.judgments(query_id)
            .filter(|&(_, g)| g >= 1)
            .map(|(d, _)| d)
            .collect()
    }

    pub fn n_queries(&self) -> usize {
        self.grades.len()
    }
}

/// Read an `id<TAB>text` TSV file (collections and query sets share the shape).
pub fn read_id_text_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        match line.split_once('\t') {
            Some((id, text)) => out.push((id.to_owned(), text.to_owned())),
            None => {
                return Err(Error::parse_line(path, i + 1, "expected `id<TAB>text`"));
            }
        }
    }
    Ok(out)
}

/// Read TREC qrels: `query_id 0 doc_id grade`, whitespace separated.
/// Grades must lie in `[0, 3]`.
pub fn read_qrels(path: &Path) -> Result<Qrels> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut qrels = Qrels::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::parse_line(
                path,
                i + 1,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let grade: u32 = fields[3]
            .parse()
            .map_err(|_| Error::parse_line(path, i + 1, format!("bad grade `{}`", fields[3])))?;
        if grade > 3 {
            return Err(Error::parse_line(
                path,
                i + 1,
                format!("grade {grade} outside [0, 3]"),
            ));
        }
        qrels.insert(fields[0], fields[2], grade);
    }
    Ok(qrels)
}

/// Read a stopword file: one token per line, `#` comment lines and blank
/// lines ignored.
pub fn read_stopwords(path: &Path) -> Result<HashSet<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut set = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        set.insert(line.to_owned());
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stopset(words: &[&str]) -> HashSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_applies_rules_and_stopwords() {
        let cfg = TokenizerConfig::with_stopwords(stopset(&["the", "s"]));
        assert_eq!(tokenize("The cat's mat!", &cfg), vec!["cat", "mat"]);
    }

    #[test]
    fn tokenize_empty_input() {
        assert_eq!(tokenize("", &TokenizerConfig::new()), Vec::<String>::new());
    }

    #[test]
    fn tokenize_case_folds() {
        assert_eq!(tokenize("ABC abc", &TokenizerConfig::new()), vec!["abc", "abc"]);
    }

    #[test]
    fn tokenize_idempotent_on_own_output() {
        let cfg = TokenizerConfig::with_stopwords(stopset(&["of"]));
        let text = "Weights of the Neural-Model (v2), trained über-fast!";
        let once = tokenize(text, &cfg);
        let twice = tokenize(&once.join(" "), &cfg);
        assert_eq!(once, twice);
    }

    #[test]
    fn vocab_cap_keeps_most_frequent() {
        let stream = ["a", "a", "a", "b", "b", "c"];
        let v = Vocabulary::build(stream, 2, &HashSet::new());
        assert_eq!(v.len(), 2);
        assert_eq!(v.id_of("a"), Some(0));
        assert_eq!(v.id_of("b"), Some(1));
        assert_eq!(v.id_of("c"), None);
    }

    #[test]
    fn vocab_under_cap() {
        let v = Vocabulary::build(["a"], 1_000_000, &HashSet::new());
        assert_eq!(v.len(), 1);
        assert_eq!(v.id_of("a"), Some(0));
    }

    #[test]
    fn vocab_tie_breaks_lexicographically() {
        let stream = ["b", "a", "b", "a"];
        let v = Vocabulary::build(stream, 1, &HashSet::new());
        assert_eq!(v.len(), 1);
        assert_eq!(v.id_of("a"), Some(0));
    }

    #[test]
    fn vocab_unbounded_cap_keeps_all_distinct() {
        let stream = ["x", "y", "z", "x"];
        let v = Vocabulary::build(stream, usize::MAX, &HashSet::new());
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn stats_probability_is_count_ratio() {
        let mut store = DocStore::new();
        let vocab = Vocabulary::build(["q", "q", "r", "r", "r", "r", "r", "r", "r", "r"], 10, &HashSet::new());
        let q = vocab.id_of("q").unwrap();
        let r = vocab.id_of("r").unwrap();
        store
            .insert("d1", TokenSeq::new(vec![q, q, r, r, r, r, r, r, r, r]))
            .unwrap();
        let stats = CollectionStats::from_store(&store, &vocab).unwrap();
        assert!((stats.p_collection(q) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn stats_oov_probability() {
        let mut store = DocStore::new();
        let vocab = Vocabulary::build(["a"], 10, &HashSet::new());
        store.insert("d1", TokenSeq::new(vec![0])).unwrap();
        let stats = CollectionStats::from_store(&store, &vocab).unwrap();
        assert_eq!(stats.p_collection(999), OOV_PROB);
    }

    #[test]
    fn stats_single_doc_avgdl() {
        let mut store = DocStore::new();
        let vocab = Vocabulary::build(["a"], 10, &HashSet::new());
        store.insert("d1", TokenSeq::new(vec![0; 7])).unwrap();
        let stats = CollectionStats::from_store(&store, &vocab).unwrap();
        assert_eq!(stats.avg_doc_len(), 7.0);
    }

    #[test]
    fn stats_empty_store_errors() {
        let store = DocStore::new();
        let vocab = Vocabulary::build(["a"], 10, &HashSet::new());
        assert!(matches!(
            CollectionStats::from_store(&store, &vocab),
            Err(Error::EmptyCollection)
        ));
    }

    #[test]
    fn stats_probabilities_sum_to_one() {
        let mut store = DocStore::new();
        let stream: Vec<String> = (0..50).map(|i| format!("t{}", i % 7)).collect();
        let vocab = Vocabulary::build(stream.iter(), 1_000_000, &HashSet::new());
        let toks = vocab.encode(&stream);
        store.insert("d1", toks).unwrap();
        let stats = CollectionStats::from_store(&store, &vocab).unwrap();
        let sum: f64 = (0..vocab.len() as TokenId).map(|id| stats.p_collection(id)).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for id in 0..vocab.len() as TokenId {
            assert!(stats.p_collection(id) >= 0.0);
        }
    }

    #[test]
    fn doc_store_rejects_duplicates() {
        let mut store = DocStore::new();
        store.insert("d", TokenSeq::new(vec![0])).unwrap();
        assert!(matches!(
            store.insert("d", TokenSeq::new(vec![1])),
            Err(Error::DuplicateDocId(_))
        ));
    }

    #[test]
    fn qrels_grade_lookup() {
        let mut q = Qrels::new();
        q.insert("q1", "d1", 2);
        q.insert("q1", "d2", 0);
        assert!(q.is_relevant("q1", "d1"));
        assert!(!q.is_relevant("q1", "d2"));
        assert!(!q.is_relevant("q2", "d1"));
        assert_eq!(q.relevant_docs("q1"), vec!["d1"]);
    }

    #[test]
    fn unique_counts_ascending() {
        let seq = TokenSeq::new(vec![3, 1, 3, 2, 3]);
        assert_eq!(seq.unique_counts(), vec![(1, 1), (2, 1), (3, 3)]);
    }
}
