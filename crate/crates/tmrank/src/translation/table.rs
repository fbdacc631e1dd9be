//! Sparse conditional translation table T(q|d), stored row-compressed and
//! keyed by the conditioning (document-side) token.
//!
//! Two interchange formats are supported:
//! - text: one `src_surface tgt_surface prob` line per entry, probabilities
//!   printed as shortest round-trip decimals, lines sorted by src surface
//!   then tgt surface
//! - binary: magic `M1TB`, version, row count, entry count, normalized flag,
//!   then the row-pointer array (u64), column ids (u32) and values (f64),
//!   all little-endian

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::{TokenId, Vocabulary};
use crate::error::{Error, Result};

const TABLE_MAGIC: &[u8; 4] = b"M1TB";
const TABLE_VERSION: u32 = 1;

/// Sparse rows of T(q|d): for each conditioning token `d`, a list of
/// (query-side token, probability) entries with strictly ascending token ids.
#[derive(Clone, Debug, PartialEq)]
pub struct TranslationTable {
    n_rows: usize,
    row_ptr: Vec<usize>,
    cols: Vec<TokenId>,
    vals: Vec<f64>,
    normalized: bool,
}

impl TranslationTable {
    /// Assemble a table from per-row entry lists. Entries within each row
    /// must have strictly ascending token ids and probabilities in (0, 1].
    pub fn from_rows(rows: Vec<Vec<(TokenId, f64)>>, normalized: bool) -> TranslationTable {
        let n_rows = rows.len();
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0), "row ids must ascend");
            for (q, p) in row {
                cols.push(q);
                vals.push(p);
            }
            row_ptr.push(cols.len());
        }
        TranslationTable {
            n_rows,
            row_ptr,
            cols,
            vals,
            normalized,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_entries(&self) -> usize {
        self.cols.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Entries of the row conditioned on `d`, as parallel (ids, values)
    /// slices. Rows outside the table are empty.
    pub fn row(&self, d: TokenId) -> (&[TokenId], &[f64]) {
        let d = d as usize;
        if d >= self.n_rows {
            return (&[], &[]);
        }
        let lo = self.row_ptr[d];
        let hi = self.row_ptr[d + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// Offset of row `d`'s first entry in the flat entry arrays.
    pub fn row_start(&self, d: TokenId) -> usize {
        self.row_ptr[d as usize]
    }

    /// Value at a flat entry offset (see [`TranslationTable::row_start`]).
    pub fn value_at(&self, entry: usize) -> f64 {
        self.vals[entry]
    }

    /// T(q|d), or 0 when the entry is absent.
    pub fn get(&self, q: TokenId, d: TokenId) -> f64 {
        let (cols, vals) = self.row(d);
        match cols.binary_search(&q) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    pub fn row_sum(&self, d: TokenId) -> f64 {
        self.row(d).1.iter().sum()
    }

    /// Iterate rows as (conditioning token, ids, values), ascending by row.
    pub fn iter_rows(&self) -> impl Iterator<Item = (TokenId, &[TokenId], &[f64])> {
        (0..self.n_rows as TokenId).map(move |d| {
            let (cols, vals) = self.row(d);
            (d, cols, vals)
        })
    }

    /// Remove entries below `threshold` and rows conditioned on tokens
    /// outside the `vocab_cap` most frequent ones (token ids are assigned in
    /// descending frequency order, so those are exactly the ids >= cap).
    /// Rows are not renormalized.
    pub fn prune(&self, threshold: f64, vocab_cap: usize) -> TranslationTable {
        let mut rows: Vec<Vec<(TokenId, f64)>> = Vec::with_capacity(self.n_rows);
        for (d, cols, vals) in self.iter_rows() {
            if (d as usize) >= vocab_cap {
                rows.push(Vec::new());
                continue;
            }
            rows.push(
                cols.iter()
                    .zip(vals)
                    .filter(|&(_, &p)| p >= threshold)
                    .map(|(&q, &p)| (q, p))
                    .collect(),
            );
        }
        TranslationTable::from_rows(rows, false)
    }

    /// Pin each row's self-translation probability to `p_self` and rescale
    /// the remaining entries so the row still sums to one. Rows must be
    /// normalized beforehand. A row whose only mass already sits on its own
    /// token stays `{d: 1}`; rows absent from the table stay absent.
    pub fn set_self_translation(&self, p_self: f64) -> Result<TranslationTable> {
        if !(0.0 < p_self && p_self < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_self must be in (0, 1), got {p_self}"
            )));
        }
        if !self.normalized {
            return Err(Error::InvalidParameter(
                "set_self_translation requires normalized rows".into(),
            ));
        }
        let mut rows: Vec<Vec<(TokenId, f64)>> = Vec::with_capacity(self.n_rows);
        for (d, cols, vals) in self.iter_rows() {
            if cols.is_empty() {
                rows.push(Vec::new());
                continue;
            }
            let other_mass: f64 = cols
                .iter()
                .zip(vals)
                .filter(|&(&q, _)| q != d)
                .map(|(_, &p)| p)
                .sum();
            if other_mass <= 0.0 {
                rows.push(vec![(d, 1.0)]);
                continue;
            }
            let scale = (1.0 - p_self) / other_mass;
            let mut row: Vec<(TokenId, f64)> = Vec::with_capacity(cols.len() + 1);
            let mut inserted_self = false;
            for (&q, &p) in cols.iter().zip(vals) {
                if q == d {
                    row.push((d, p_self));
                    inserted_self = true;
                } else {
                    if !inserted_self && q > d {
                        row.push((d, p_self));
                        inserted_self = true;
                    }
                    row.push((q, p * scale));
                }
            }
            if !inserted_self {
                row.push((d, p_self));
            }
            rows.push(row);
        }
        Ok(TranslationTable::from_rows(rows, true))
    }

    /// Write the text interchange format. Entries are sorted by source
    /// surface, then target surface.
    pub fn write_text(&self, vocab: &Vocabulary, path: &Path) -> Result<()> {
        let mut lines: Vec<(String, String, f64)> = Vec::with_capacity(self.n_entries());
        for (d, cols, vals) in self.iter_rows() {
            let Some(src) = vocab.surface(d) else { continue };
            for (&q, &p) in cols.iter().zip(vals) {
                let Some(tgt) = vocab.surface(q) else { continue };
                lines.push((src.to_owned(), tgt.to_owned(), p));
            }
        }
        lines.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for (src, tgt, p) in lines {
            // `{}` prints the shortest decimal that round-trips the f64
            writeln!(w, "{src} {tgt} {p}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read the text interchange format. `normalized` is not encoded in the
    /// text form and must be supplied by the caller.
    pub fn read_text(vocab: &Vocabulary, path: &Path, normalized: bool) -> Result<TranslationTable> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Vec<(TokenId, f64)>> = vec![Vec::new(); vocab.len()];
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(' ');
            let (src, tgt, prob) = match (it.next(), it.next(), it.next(), it.next()) {
                (Some(s), Some(t), Some(p), None) => (s, t, p),
                _ => {
                    return Err(Error::parse_line(path, i + 1, "expected `src tgt prob`"));
                }
            };
            let prob: f64 = prob
                .parse()
                .map_err(|_| Error::parse_line(path, i + 1, format!("bad probability `{prob}`")))?;
            let d = vocab
                .id_of(src)
                .ok_or_else(|| Error::parse_line(path, i + 1, format!("unknown token `{src}`")))?;
            let q = vocab
                .id_of(tgt)
                .ok_or_else(|| Error::parse_line(path, i + 1, format!("unknown token `{tgt}`")))?;
            rows[d as usize].push((q, prob));
        }
        for row in &mut rows {
            row.sort_by_key(|&(q, _)| q);
        }
        Ok(TranslationTable::from_rows(rows, normalized))
    }

    /// Write the binary row-compressed format.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let emit = |w: &mut BufWriter<fs::File>, bytes: &[u8]| -> Result<()> {
            w.write_all(bytes).map_err(|e| Error::io(path, e))
        };
        emit(&mut w, TABLE_MAGIC)?;
        emit(&mut w, &TABLE_VERSION.to_le_bytes())?;
        emit(&mut w, &(self.n_rows as u64).to_le_bytes())?;
        emit(&mut w, &(self.cols.len() as u64).to_le_bytes())?;
        emit(&mut w, &[self.normalized as u8])?;
        for &p in &self.row_ptr {
            emit(&mut w, &(p as u64).to_le_bytes())?;
        }
        for &c in &self.cols {
            emit(&mut w, &c.to_le_bytes())?;
        }
        for &v in &self.vals {
            emit(&mut w, &v.to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read the binary row-compressed format.
    pub fn read_binary(path: &Path) -> Result<TranslationTable> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(*off..*off + n)
                .ok_or_else(|| Error::bad_format(path, "truncated table file"))?;
            *off += n;
            Ok(s)
        };
        if take(&mut off, 4)? != TABLE_MAGIC {
            return Err(Error::bad_format(path, "not a translation table file"));
        }
        let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        if version != TABLE_VERSION {
            return Err(Error::bad_format(path, format!("unsupported version {version}")));
        }
        let n_rows = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let nnz = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let normalized = take(&mut off, 1)?[0] != 0;
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        for _ in 0..=n_rows {
            row_ptr.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize);
        }
        let mut cols = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            cols.push(u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()));
        }
        let mut vals = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            vals.push(f64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()));
        }
        if row_ptr.last() != Some(&nnz) {
            return Err(Error::bad_format(path, "row pointer / entry count mismatch"));
        }
        Ok(TranslationTable {
            n_rows,
            row_ptr,
            cols,
            vals,
            normalized,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn table(rows: Vec<Vec<(TokenId, f64)>>, normalized: bool) -> TranslationTable {
        TranslationTable::from_rows(rows, normalized)
    }

    #[test]
    fn lookup_and_row_access() {
        let t = table(vec![vec![(0, 0.25), (2, 0.75)], vec![]], true);
        assert_eq!(t.get(0, 0), 0.25);
        assert_eq!(t.get(2, 0), 0.75);
        assert_eq!(t.get(1, 0), 0.0);
        assert_eq!(t.get(0, 1), 0.0);
        assert_eq!(t.get(0, 5), 0.0);
    }

    #[test]
    fn prune_drops_small_entries() {
        let t = table(vec![vec![(0, 0.9994), (1, 0.0006)]], true);
        let pruned = t.prune(1e-3, usize::MAX);
        assert_eq!(pruned.get(0, 0), 0.9994);
        assert_eq!(pruned.get(1, 0), 0.0);
        assert!(!pruned.is_normalized());
    }

    #[test]
    fn prune_threshold_zero_keeps_entries() {
        let t = table(vec![vec![(0, 0.3), (1, 0.7)], vec![(0, 1.0)]], true);
        let pruned = t.prune(0.0, usize::MAX);
        for d in 0..2 {
            let (c0, v0) = t.row(d);
            let (c1, v1) = pruned.row(d);
            assert_eq!(c0, c1);
            assert_eq!(v0, v1);
        }
    }

    #[test]
    fn prune_vocab_cap_drops_infrequent_rows() {
        // id order is frequency order: row 1 is the less frequent token
        let t = table(vec![vec![(0, 0.5)], vec![(1, 0.5)]], false);
        let pruned = t.prune(0.0, 1);
        assert_eq!(pruned.row(0).0.len(), 1);
        assert_eq!(pruned.row(1).0.len(), 0);
    }

    #[test]
    fn self_translation_rescales_row() {
        // row for token 1: {0: 0.6, 1: 0.4}, p_self 0.5 -> {0: 0.5, 1: 0.5}
        let t = table(vec![vec![], vec![(0, 0.6), (1, 0.4)]], true);
        let out = t.set_self_translation(0.5).unwrap();
        assert!((out.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((out.get(1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn self_translation_degenerate_row() {
        let t = table(vec![vec![(0, 1.0)]], true);
        let out = t.set_self_translation(0.3).unwrap();
        assert_eq!(out.get(0, 0), 1.0);
    }

    #[test]
    fn self_translation_inserts_missing_entry() {
        // row for token 0 = {1: 0.5, 2: 0.5}, p_self 0.2 -> {0: 0.2, 1: 0.4, 2: 0.4}
        let t = table(vec![vec![(1, 0.5), (2, 0.5)]], true);
        let out = t.set_self_translation(0.2).unwrap();
        assert!((out.get(0, 0) - 0.2).abs() < 1e-12);
        assert!((out.get(1, 0) - 0.4).abs() < 1e-12);
        assert!((out.get(2, 0) - 0.4).abs() < 1e-12);
        assert!((out.row_sum(0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn self_translation_rejects_bad_p_self() {
        let t = table(vec![vec![(0, 1.0)]], true);
        assert!(t.set_self_translation(0.0).is_err());
        assert!(t.set_self_translation(1.0).is_err());
    }

    #[test]
    fn self_translation_requires_normalized_rows() {
        let t = table(vec![vec![(0, 0.4)]], false);
        assert!(t.set_self_translation(0.5).is_err());
    }

    #[test]
    fn binary_roundtrip_is_lossless() {
        let t = table(
            vec![
                vec![(0, 0.1234567890123), (3, 1.0 / 3.0)],
                vec![],
                vec![(2, 1e-7)],
            ],
            false,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        t.write_binary(&path).unwrap();
        let back = TranslationTable::read_binary(&path).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn text_roundtrip_is_lossless() {
        let vocab = Vocabulary::build(["aa", "bb", "cc"], 10, &HashSet::new());
        let t = table(
            vec![vec![(0, 0.5), (1, 1.0 / 7.0)], vec![(2, 0.25)], vec![]],
            true,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        t.write_text(&vocab, &path).unwrap();
        let back = TranslationTable::read_text(&vocab, &path, true).unwrap();
        assert_eq!(back, t);
    }
}
