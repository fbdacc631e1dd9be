//! Inverted index construction, BM25 scoring, and top-k candidate generation.
//!
//! On-disk layout of an index directory:
//! - `manifest.json` — doc count, average document length, BM25 parameters
//! - `postings.bin`  — little-endian u32 blocks: `token_id, n, (ordinal, tf) * n`
//! - `doc_ids.txt`   — one doc id per line, ordinal order
//! - `doc_lens.bin`  — little-endian u32 per document, ordinal order
//! - `vocab.tsv`     — `surface<TAB>count` per line, token id = line index
//! - `stopwords.txt` — tokenizer stopword list (may be empty)

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{CollectionStats, DocStore, TokenId, TokenSeq, Vocabulary};
use crate::error::{Error, Result};

/// BM25 free parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) {
            return Err(Error::InvalidParameter(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidParameter(format!("b must be in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

/// A ranked candidate list for one query: descending score, ties broken by
/// ascending doc id, no duplicates.
#[derive(Clone, Debug)]
pub struct CandidateList {
    pub query_id: String,
    pub entries: Vec<(String, f64)>,
}

/// Immutable postings over a document store.
#[derive(Clone, Debug)]
pub struct InvertedIndex {
    postings: Vec<Vec<Posting>>,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avg_doc_len: f64,
}

impl InvertedIndex {
    /// Build an index over `store`. Postings are keyed by token id and sorted
    /// by ordinal; empty documents contribute a length entry only.
    pub fn build(store: &DocStore, vocab: &Vocabulary) -> Result<InvertedIndex> {
        if store.is_empty() {
            return Err(Error::EmptyCollection);
        }
        let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); vocab.len()];
        let mut doc_ids = Vec::with_capacity(store.len());
        let mut doc_lens = Vec::with_capacity(store.len());
        let mut total_len = 0u64;
        for (ordinal, (doc_id, seq)) in store.iter().enumerate() {
            doc_ids.push(doc_id.to_owned());
            doc_lens.push(seq.len() as u32);
            total_len += seq.len() as u64;
            for (token, tf) in seq.unique_counts() {
                postings[token as usize].push(Posting {
                    ordinal: ordinal as u32,
                    tf,
                });
            }
        }
        Ok(InvertedIndex {
            postings,
            doc_ids,
            doc_lens,
            avg_doc_len: total_len as f64 / store.len() as f64,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.postings.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, ordinal: usize) -> u32 {
        self.doc_lens[ordinal]
    }

    pub fn doc_id(&self, ordinal: usize) -> &str {
        &self.doc_ids[ordinal]
    }

    pub fn ordinal_of(&self, doc_id: &str) -> Option<usize> {
        // linear scan is avoided: doc ids are unique, build a lookup lazily
        // at call sites that need many; retrieval works in ordinals.
        self.doc_ids.iter().position(|d| d == doc_id)
    }

    pub fn postings(&self, token: TokenId) -> &[Posting] {
        self.postings
            .get(token as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn doc_freq(&self, token: TokenId) -> u32 {
        self.postings(token).len() as u32
    }

    /// `ln(1 + (N - df + 0.5) / (df + 0.5))`; zero for tokens absent from the
    /// index (they can never contribute to a match).
    pub fn idf(&self, token: TokenId) -> f64 {
        let df = self.doc_freq(token) as f64;
        if df == 0.0 {
            return 0.0;
        }
        let n = self.n_docs() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Sum of IDF values over query token occurrences (the BM25 feature
    /// normalizer); a token occurring twice contributes its IDF twice.
    pub fn sum_idf(&self, query: &TokenSeq) -> f64 {
        query.ids.iter().map(|&t| self.idf(t)).sum()
    }

    fn tf_of(&self, token: TokenId, ordinal: u32) -> u32 {
        let plist = self.postings(token);
        match plist.binary_search_by_key(&ordinal, |p| p.ordinal) {
            Ok(i) => plist[i].tf,
            Err(_) => 0,
        }
    }

    /// BM25 score of a document for a query. Duplicated query tokens
    /// contribute once per occurrence; unknown tokens contribute zero.
    pub fn bm25_score(&self, query: &TokenSeq, ordinal: usize, params: Bm25Params) -> f64 {
        assert!(ordinal < self.n_docs(), "doc ordinal out of range");
        let dl = self.doc_lens[ordinal] as f64;
        let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avg_doc_len);
        let mut score = 0.0;
        for &t in &query.ids {
            let tf = self.tf_of(t, ordinal as u32) as f64;
            if tf > 0.0 {
                score += self.idf(t) * tf * (params.k1 + 1.0) / (tf + norm);
            }
        }
        score
    }

    /// Top-k documents by BM25 among documents sharing at least one query
    /// token. Ties are broken by ascending doc id; fewer than `k` results are
    /// returned when fewer documents match.
    pub fn retrieve_topk(
        &self,
        query_id: &str,
        query: &TokenSeq,
        k: usize,
        params: Bm25Params,
    ) -> CandidateList {
        assert!(k >= 1, "k must be at least 1");
        // document-at-a-time: merge postings of unique query tokens, keeping a
        // bounded heap of the best k candidates.
        let unique = query.unique_counts();
        let mut accum: Vec<(u32, f64)> = Vec::new();
        {
            // gather (ordinal, score) via a k-way postings merge
            let mut cursors: Vec<(usize, &[Posting], f64, u32)> = unique
                .iter()
                .filter(|&&(t, _)| !self.postings(t).is_empty())
                .map(|&(t, mult)| (0usize, self.postings(t), self.idf(t), mult))
                .collect();
            loop {
                let mut next_ord = u32::MAX;
                for (pos, plist, _, _) in &cursors {
                    if *pos < plist.len() {
                        next_ord = next_ord.min(plist[*pos].ordinal);
                    }
                }
                if next_ord == u32::MAX {
                    break;
                }
                let dl = self.doc_lens[next_ord as usize] as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avg_doc_len);
                let mut score = 0.0;
                for (pos, plist, idf, mult) in &mut cursors {
                    if *pos < plist.len() && plist[*pos].ordinal == next_ord {
                        let tf = plist[*pos].tf as f64;
                        score += *mult as f64 * *idf * tf * (params.k1 + 1.0) / (tf + norm);
                        *pos += 1;
                    }
                }
                accum.push((next_ord, score));
            }
        }

        // bounded min-heap: weakest candidate on top
        struct Entry<'a> {
            score: f64,
            doc_id: &'a str,
            ordinal: u32,
        }
        impl PartialEq for Entry<'_> {
            fn eq(&self, other: &Self) -> bool {
                self.cmp(other) == Ordering::Equal
            }
        }
        impl Eq for Entry<'_> {}
        impl PartialOrd for Entry<'_> {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Entry<'_> {
            // BinaryHeap is a max-heap; "greatest" entry = weakest candidate
            // (lowest score, then highest doc id) so it pops first.
            fn cmp(&self, other: &Self) -> Ordering {
                other
                    .score
                    .partial_cmp(&self.score)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| self.doc_id.cmp(other.doc_id))
            }
        }

        let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(k + 1);
        for (ordinal, score) in accum {
            heap.push(Entry {
                score,
                doc_id: &self.doc_ids[ordinal as usize],
                ordinal,
            });
            if heap.len() > k {
                heap.pop();
            }
        }
        let mut ranked: Vec<Entry> = heap.into_vec();
        ranked.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.doc_id.cmp(b.doc_id))
        });
        CandidateList {
            query_id: query_id.to_owned(),
            entries: ranked
                .into_iter()
                .map(|e| (self.doc_ids[e.ordinal as usize].clone(), e.score))
                .collect(),
        }
    }

    /// Rebuild a document store from the postings. Token order within each
    /// document is lost (tokens come back sorted by id), which is immaterial
    /// to every scorer in this crate: they depend only on token multisets.
    pub fn reconstruct_store(&self) -> DocStore {
        let mut docs: Vec<Vec<TokenId>> = self
            .doc_lens
            .iter()
            .map(|&len| Vec::with_capacity(len as usize))
            .collect();
        for (token, plist) in self.postings.iter().enumerate() {
            for p in plist {
                for _ in 0..p.tf {
                    docs[p.ordinal as usize].push(token as TokenId);
                }
            }
        }
        let mut store = DocStore::new();
        for (ordinal, ids) in docs.into_iter().enumerate() {
            store
                .insert(self.doc_ids[ordinal].clone(), TokenSeq::new(ids))
                .expect("doc ids unique by construction");
        }
        store
    }

    /// Collection statistics derived from the postings (token counts are the
    /// per-token tf sums).
    pub fn collection_stats(&self) -> CollectionStats {
        let token_counts: Vec<u64> = self
            .postings
            .iter()
            .map(|pl| pl.iter().map(|p| p.tf as u64).sum())
            .collect();
        let doc_freqs: Vec<u32> = self.postings.iter().map(|pl| pl.len() as u32).collect();
        CollectionStats::from_parts(token_counts, doc_freqs, self.avg_doc_len, self.n_docs())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    doc_count: usize,
    avgdl: f64,
    k1: f64,
    b: f64,
}

/// Persist an index, its vocabulary, and the tokenizer stopword list.
pub fn save_index(
    dir: &Path,
    index: &InvertedIndex,
    vocab: &Vocabulary,
    params: Bm25Params,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        doc_count: index.n_docs(),
        avgdl: index.avg_doc_len,
        k1: params.k1,
        b: params.b,
    };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;

    let ppath = dir.join("postings.bin");
    let mut w = BufWriter::new(fs::File::create(&ppath).map_err(|e| Error::io(&ppath, e))?);
    for (token, plist) in index.postings.iter().enumerate() {
        if plist.is_empty() {
            continue;
        }
        w.write_all(&(token as u32).to_le_bytes())
            .and_then(|_| w.write_all(&(plist.len() as u32).to_le_bytes()))
            .map_err(|e| Error::io(&ppath, e))?;
        for p in plist {
            w.write_all(&p.ordinal.to_le_bytes())
                .and_then(|_| w.write_all(&p.tf.to_le_bytes()))
                .map_err(|e| Error::io(&ppath, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&ppath, e))?;

    let dpath = dir.join("doc_ids.txt");
    fs::write(&dpath, index.doc_ids.join("\n") + "\n").map_err(|e| Error::io(&dpath, e))?;

    let lpath = dir.join("doc_lens.bin");
    let mut bytes = Vec::with_capacity(index.doc_lens.len() * 4);
    for &len in &index.doc_lens {
        bytes.extend_from_slice(&len.to_le_bytes());
    }
    fs::write(&lpath, bytes).map_err(|e| Error::io(&lpath, e))?;

    let vpath = dir.join("vocab.tsv");
    let mut vw = BufWriter::new(fs::File::create(&vpath).map_err(|e| Error::io(&vpath, e))?);
    for (surface, freq) in vocab.entries() {
        writeln!(vw, "{surface}\t{freq}").map_err(|e| Error::io(&vpath, e))?;
    }
    vw.flush().map_err(|e| Error::io(&vpath, e))?;

    let spath = dir.join("stopwords.txt");
    let mut stops: Vec<&str> = vocab.stopwords().iter().map(String::as_str).collect();
    stops.sort_unstable();
    let mut body = stops.join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    fs::write(&spath, body).map_err(|e| Error::io(&spath, e))?;
    Ok(())
}

/// Load an index directory written by [`save_index`].
pub fn load_index(dir: &Path) -> Result<(InvertedIndex, Vocabulary, Bm25Params)> {
    let mpath = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(
        &fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?,
    )?;

    let spath = dir.join("stopwords.txt");
    let stopwords = crate::corpus::read_stopwords(&spath)?;

    let vpath = dir.join("vocab.tsv");
    let vfile = fs::File::open(&vpath).map_err(|e| Error::io(&vpath, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(vfile).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&vpath, e))?;
        if line.is_empty() {
            continue;
        }
        let (surface, freq) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse_line(&vpath, i + 1, "expected `surface<TAB>count`"))?;
        let freq: u64 = freq
            .parse()
            .map_err(|_| Error::parse_line(&vpath, i + 1, format!("bad count `{freq}`")))?;
        entries.push((surface.to_owned(), freq));
    }
    let vocab = Vocabulary::from_entries(entries, stopwords);

    let dpath = dir.join("doc_ids.txt");
    let doc_ids: Vec<String> = fs::read_to_string(&dpath)
        .map_err(|e| Error::io(&dpath, e))?
        .lines()
        .map(str::to_owned)
        .collect();

    let lpath = dir.join("doc_lens.bin");
    let lbytes = fs::read(&lpath).map_err(|e| Error::io(&lpath, e))?;
    if lbytes.len() != doc_ids.len() * 4 {
        return Err(Error::bad_format(&lpath, "doc_lens length mismatch"));
    }
    let doc_lens: Vec<u32> = lbytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();

    let ppath = dir.join("postings.bin");
    let mut pfile = fs::File::open(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let mut pbytes = Vec::new();
    pfile
        .read_to_end(&mut pbytes)
        .map_err(|e| Error::io(&ppath, e))?;
    let mut postings: Vec<Vec<Posting>> = vec![Vec::new(); vocab.len()];
    let mut off = 0usize;
    let read_u32 = |bytes: &[u8], off: usize| -> Result<u32> {
        bytes
            .get(off..off + 4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .ok_or_else(|| Error::bad_format(&ppath, "truncated postings"))
    };
    while off < pbytes.len() {
        let token = read_u32(&pbytes, off)? as usize;
        let n = read_u32(&pbytes, off + 4)? as usize;
        off += 8;
        if token >= postings.len() {
            return Err(Error::bad_format(&ppath, format!("token id {token} out of range")));
        }
        let mut plist = Vec::with_capacity(n);
        for _ in 0..n {
            let ordinal = read_u32(&pbytes, off)?;
            let tf = read_u32(&pbytes, off + 4)?;
            off += 8;
            plist.push(Posting { ordinal, tf });
        }
        postings[token] = plist;
    }

    if doc_ids.len() != manifest.doc_count {
        return Err(Error::bad_format(&dpath, "doc count mismatch with manifest"));
    }

    Ok((
        InvertedIndex {
            postings,
            doc_ids,
            doc_lens,
            avg_doc_len: manifest.avgdl,
        },
        vocab,
        Bm25Params {
            k1: manifest.k1,
            b: manifest.b,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn tiny_store(docs: &[(&str, &str)]) -> (DocStore, Vocabulary) {
        let cfg = crate::corpus::TokenizerConfig::new();
        let mut stream = Vec::new();
        for (_, text) in docs {
            stream.extend(crate::corpus::tokenize(text, &cfg));
        }
        let vocab = Vocabulary::build(stream.iter(), usize::MAX, &HashSet::new());
        let mut store = DocStore::new();
        for (id, text) in docs {
            let toks = crate::corpus::tokenize(text, &cfg);
            store.insert(*id, vocab.encode(&toks)).unwrap();
        }
        (store, vocab)
    }

    #[test]
    fn build_produces_expected_postings() {
        let (store, vocab) = tiny_store(&[("d1", "a b"), ("d2", "a")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let a = vocab.id_of("a").unwrap();
        let b = vocab.id_of("b").unwrap();
        assert_eq!(
            index.postings(a),
            &[
                Posting { ordinal: 0, tf: 1 },
                Posting { ordinal: 1, tf: 1 }
            ]
        );
        assert_eq!(index.postings(b), &[Posting { ordinal: 0, tf: 1 }]);
    }

    #[test]
    fn empty_doc_gets_length_entry_only() {
        let (mut store, vocab) = tiny_store(&[("d1", "a")]);
        store.insert("d2", TokenSeq::default()).unwrap();
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        assert_eq!(index.doc_len(1), 0);
        assert_eq!(index.doc_freq(vocab.id_of("a").unwrap()), 1);
    }

    #[test]
    fn rebuild_is_deterministic() {
        let (store, vocab) = tiny_store(&[("d1", "a b c a"), ("d2", "b c"), ("d3", "c")]);
        let i1 = InvertedIndex::build(&store, &vocab).unwrap();
        let i2 = InvertedIndex::build(&store, &vocab).unwrap();
        assert_eq!(i1.postings, i2.postings);
        assert_eq!(i1.doc_lens, i2.doc_lens);
    }

    #[test]
    fn bm25_matches_hand_computed_value() {
        // N=4, df=2, tf=2, dl=avgdl=4, k1=1.2, b=0.75:
        // idf = ln 2, tf part = 2*2.2/(2+1.2) = 1.375
        let (store, vocab) = tiny_store(&[
            ("d1", "q q x y"),
            ("d2", "q z x y"),
            ("d3", "x y z w"),
            ("d4", "x y z w"),
        ]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let q = vocab.id_of("q").unwrap();
        let score = index.bm25_score(&TokenSeq::new(vec![q]), 0, Bm25Params::default());
        let expect = (2.0f64).ln() * 1.375;
        assert!((score - expect).abs() < 1e-9, "score {score} vs {expect}");
        assert!((expect - 0.953077).abs() < 1e-6);
    }

    #[test]
    fn absent_term_contributes_zero() {
        let (store, vocab) = tiny_store(&[("d1", "a b"), ("d2", "c")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let c = vocab.id_of("c").unwrap();
        assert_eq!(index.bm25_score(&TokenSeq::new(vec![c]), 0, Bm25Params::default()), 0.0);
    }

    #[test]
    fn b_zero_removes_length_normalization() {
        let (store, vocab) = tiny_store(&[("d1", "a"), ("d2", "a b c d e f g h")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let a = vocab.id_of("a").unwrap();
        let params = Bm25Params { k1: 1.2, b: 0.0 };
        let q = TokenSeq::new(vec![a]);
        let s1 = index.bm25_score(&q, 0, params);
        let s2 = index.bm25_score(&q, 1, params);
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn topk_ranks_two_term_doc_first() {
        let (store, vocab) = tiny_store(&[("d1", "a b"), ("d2", "a c")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let q = TokenSeq::new(vec![vocab.id_of("a").unwrap(), vocab.id_of("b").unwrap()]);
        let top = index.retrieve_topk("q1", &q, 10, Bm25Params::default());
        assert_eq!(top.entries[0].0, "d1");
    }

    #[test]
    fn topk_underfull() {
        let (store, vocab) = tiny_store(&[("d1", "a"), ("d2", "a"), ("d3", "a"), ("d4", "z")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let q = TokenSeq::new(vec![vocab.id_of("a").unwrap()]);
        let top = index.retrieve_topk("q1", &q, 10, Bm25Params::default());
        assert_eq!(top.entries.len(), 3);
    }

    #[test]
    fn topk_tie_breaks_by_ascending_doc_id() {
        let (store, vocab) = tiny_store(&[("dz", "a b"), ("da", "a b"), ("dm", "a b")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let q = TokenSeq::new(vec![vocab.id_of("a").unwrap()]);
        let top = index.retrieve_topk("q1", &q, 3, Bm25Params::default());
        let ids: Vec<&str> = top.entries.iter().map(|(d, _)| d.as_str()).collect();
        assert_eq!(ids, vec!["da", "dm", "dz"]);
    }

    #[test]
    fn topk_prefix_property() {
        let (store, vocab) = tiny_store(&[
            ("d1", "a b c"),
            ("d2", "a b"),
            ("d3", "a c c"),
            ("d4", "b c"),
            ("d5", "a"),
        ]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let q = TokenSeq::new(vec![vocab.id_of("a").unwrap(), vocab.id_of("c").unwrap()]);
        let full = index.retrieve_topk("q", &q, 5, Bm25Params::default());
        for k in 1..=5 {
            let part = index.retrieve_topk("q", &q, k, Bm25Params::default());
            assert_eq!(part.entries[..], full.entries[..part.entries.len()]);
        }
    }

    #[test]
    fn topk_scores_match_direct_bm25() {
        let (store, vocab) = tiny_store(&[("d1", "a b c"), ("d2", "a a"), ("d3", "b c")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let q = TokenSeq::new(vec![
            vocab.id_of("a").unwrap(),
            vocab.id_of("a").unwrap(),
            vocab.id_of("b").unwrap(),
        ]);
        let top = index.retrieve_topk("q", &q, 10, Bm25Params::default());
        for (doc_id, score) in &top.entries {
            let ordinal = store.ordinal_of(doc_id).unwrap();
            let direct = index.bm25_score(&q, ordinal, Bm25Params::default());
            assert!((score - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn adding_query_term_occurrence_never_hurts_single_term_query() {
        // single-term query; df/avgdl recomputed after the edit
        let base = [("d1", "a a b b b"), ("d2", "c c c c"), ("d3", "a b c d e")];
        for extra in 1..=4 {
            let (store, vocab) = tiny_store(&base);
            let index = InvertedIndex::build(&store, &vocab).unwrap();
            let a = vocab.id_of("a").unwrap();
            let before = index.bm25_score(&TokenSeq::new(vec![a]), 0, Bm25Params::default());

            let mut grown = String::from("a a b b b");
            for _ in 0..extra {
                grown.push_str(" a");
            }
            let docs = [("d1", grown.as_str()), ("d2", "c c c c"), ("d3", "a b c d e")];
            let (store2, vocab2) = tiny_store(&docs);
            let index2 = InvertedIndex::build(&store2, &vocab2).unwrap();
            let a2 = vocab2.id_of("a").unwrap();
            let after = index2.bm25_score(&TokenSeq::new(vec![a2]), 0, Bm25Params::default());
            assert!(
                after >= before - 1e-12,
                "extra={extra}: {after} < {before}"
            );
        }
    }

    #[test]
    fn reconstructed_store_preserves_token_multisets() {
        let (store, vocab) = tiny_store(&[("d1", "b a c a"), ("d2", "c b"), ("d3", "a")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let rebuilt = index.reconstruct_store();
        assert_eq!(rebuilt.len(), store.len());
        for (doc_id, seq) in store.iter() {
            let got = rebuilt.get(doc_id).unwrap();
            assert_eq!(got.unique_counts(), seq.unique_counts());
            assert_eq!(got.len(), seq.len());
        }
    }

    #[test]
    fn index_roundtrip_is_lossless() {
        let (store, vocab) = tiny_store(&[("d1", "a b c a"), ("d2", "b"), ("d3", "c a")]);
        let index = InvertedIndex::build(&store, &vocab).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_index(dir.path(), &index, &vocab, Bm25Params::default()).unwrap();
        let (loaded, lvocab, params) = load_index(dir.path()).unwrap();
        assert_eq!(loaded.postings, index.postings);
        assert_eq!(loaded.doc_ids, index.doc_ids);
        assert_eq!(loaded.doc_lens, index.doc_lens);
        assert_eq!(loaded.avg_doc_len, index.avg_doc_len);
        assert_eq!(lvocab.len(), vocab.len());
        assert_eq!(lvocab.id_of("a"), vocab.id_of("a"));
        assert_eq!(params.k1, 1.2);
    }
}
