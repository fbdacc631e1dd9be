//! Parallel-corpus construction: queries paired with chunks of their
//! relevant documents.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{DocStore, Qrels, TokenSeq, Vocabulary};
use crate::error::{Error, Result};

/// One aligned pair: document-side source, query-side target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitextPair {
    pub src: TokenSeq,
    pub tgt: TokenSeq,
}

/// An ordered list of aligned pairs over a shared vocabulary.
#[derive(Clone, Debug)]
pub struct ParallelCorpus {
    pub pairs: Vec<BitextPair>,
    pub vocab_size: usize,
}

impl ParallelCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Split a document into consecutive non-overlapping chunks of `chunk_len`
/// tokens; a non-empty trailing partial chunk is kept.
pub fn chunk_document(doc: &TokenSeq, chunk_len: usize) -> Vec<TokenSeq> {
    assert!(chunk_len >= 1, "chunk_len must be at least 1");
    doc.ids
        .chunks(chunk_len)
        .map(|c| TokenSeq::new(c.to_vec()))
        .collect()
}

/// Counters for records skipped during bitext construction.
#[derive(Clone, Copy, Debug, Default)]
pub struct BitextSkips {
    pub missing_docs: usize,
    pub missing_queries: usize,
    pub empty_sides: usize,
}

/// Build the training corpus: one (chunk, query) pair per chunk of each
/// relevant (grade >= 1) document. With `symmetrize` the swapped pair is
/// appended directly after each original. Order is deterministic: query id,
/// then doc id, then chunk ordinal.
pub fn build_bitext(
    queries: &[(String, TokenSeq)],
    qrels: &Qrels,
    store: &DocStore,
    vocab_size: usize,
    chunk_len: usize,
    symmetrize: bool,
) -> Result<(ParallelCorpus, BitextSkips)> {
    let mut pairs = Vec::new();
    let mut skips = BitextSkips::default();

    let mut sorted_queries: Vec<&(String, TokenSeq)> = queries.iter().collect();
    sorted_queries.sort_by(|a, b| a.0.cmp(&b.0));

    for (query_id, query_tokens) in sorted_queries {
        if !qrels.contains_query(query_id) {
            continue;
        }
        if query_tokens.is_empty() {
            skips.empty_sides += 1;
            continue;
        }
        for doc_id in qrels.relevant_docs(query_id) {
            let Some(doc) = store.get(doc_id) else {
                skips.missing_docs += 1;
                continue;
            };
            for chunk in chunk_document(doc, chunk_len) {
                if chunk.is_empty() {
                    continue;
                }
                pairs.push(BitextPair {
                    src: chunk.clone(),
                    tgt: query_tokens.clone(),
                });
                if symmetrize {
                    pairs.push(BitextPair {
                        src: query_tokens.clone(),
                        tgt: chunk,
                    });
                }
            }
        }
    }

    // qrels queries with no matching query text
    for qid in qrels.queries() {
        if !queries.iter().any(|(id, _)| id == qid) {
            skips.missing_queries += 1;
        }
    }

    if pairs.is_empty() {
        return Err(Error::EmptyBitext);
    }
    Ok((ParallelCorpus { pairs, vocab_size }, skips))
}

/// Write the corpus as two aligned plain-text files (one sequence per line,
/// space-separated surface tokens), the GIZA-style convention.
pub fn write_bitext_text(
    corpus: &ParallelCorpus,
    vocab: &Vocabulary,
    src_path: &Path,
    tgt_path: &Path,
) -> Result<()> {
    let mut sw = BufWriter::new(fs::File::create(src_path).map_err(|e| Error::io(src_path, e))?);
    let mut tw = BufWriter::new(fs::File::create(tgt_path).map_err(|e| Error::io(tgt_path, e))?);
    for pair in &corpus.pairs {
        writeln!(sw, "{}", vocab.decode(&pair.src).join(" ")).map_err(|e| Error::io(src_path, e))?;
        writeln!(tw, "{}", vocab.decode(&pair.tgt).join(" ")).map_err(|e| Error::io(tgt_path, e))?;
    }
    sw.flush().map_err(|e| Error::io(src_path, e))?;
    tw.flush().map_err(|e| Error::io(tgt_path, e))?;
    Ok(())
}

/// Read two aligned text files back into a corpus. Lines must pair up;
/// tokens missing from the vocabulary are dropped, and pairs left with an
/// empty side are skipped.
pub fn read_bitext_text(
    vocab: &Vocabulary,
    src_path: &Path,
    tgt_path: &Path,
) -> Result<ParallelCorpus> {
    let src_file = fs::File::open(src_path).map_err(|e| Error::io(src_path, e))?;
    let tgt_file = fs::File::open(tgt_path).map_err(|e| Error::io(tgt_path, e))?;
    let src_lines: Vec<String> = BufReader::new(src_file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(src_path, e))?;
    let tgt_lines: Vec<String> = BufReader::new(tgt_file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(tgt_path, e))?;
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::bad_format(
            src_path,
            format!(
                "aligned files differ in length: {} vs {}",
                src_lines.len(),
                tgt_lines.len()
            ),
        ));
    }
    let encode = |line: &str| -> TokenSeq {
        TokenSeq::new(
            line.split_whitespace()
                .filter_map(|t| vocab.id_of(t))
                .collect(),
        )
    };
    let mut pairs = Vec::with_capacity(src_lines.len());
    for (s, t) in src_lines.iter().zip(&tgt_lines) {
        let src = encode(s);
        let tgt = encode(t);
        if src.is_empty() || tgt.is_empty() {
            continue;
        }
        pairs.push(BitextPair { src, tgt });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyBitext);
    }
    Ok(ParallelCorpus {
        pairs,
        vocab_size: vocab.len(),
    })
}
