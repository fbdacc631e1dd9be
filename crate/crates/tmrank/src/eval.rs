//! IR metrics, run-file I/O, multi-seed aggregation, and significance
//! testing.
//!
//! Run files use the TREC format: `query_id Q0 doc_id rank score tag`, ranks
//! contiguous from 1, scores non-increasing. NDCG uses the linear-gain
//! convention (`grade / log2(rank + 1)`); unjudged documents count as grade 0.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Qrels;
use crate::error::{Error, Result};
use crate::index::CandidateList;

/// A ranked run: per query, (doc id, score) in rank order, plus a tag.
#[derive(Clone, Debug, PartialEq)]
pub struct RunFile {
    pub tag: String,
    pub rankings: BTreeMap<String, Vec<(String, f64)>>,
}

impl RunFile {
    pub fn from_candidates(lists: &[CandidateList], tag: impl Into<String>) -> RunFile {
        RunFile {
            tag: tag.into(),
            rankings: lists
                .iter()
                .map(|c| (c.query_id.clone(), c.entries.clone()))
                .collect(),
        }
    }

    pub fn to_candidates(&self) -> Vec<CandidateList> {
        self.rankings
            .iter()
            .map(|(query_id, entries)| CandidateList {
                query_id: query_id.clone(),
                entries: entries.clone(),
            })
            .collect()
    }
}

/// Format with six significant digits in plain decimal.
fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.5}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Write the TREC run format, queries in ascending id order.
pub fn write_run(run: &RunFile, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (query_id, entries) in &run.rankings {
        for (rank, (doc_id, score)) in entries.iter().enumerate() {
            writeln!(
                w,
                "{query_id} Q0 {doc_id} {} {} {}",
                rank + 1,
                fmt_sig6(*score),
                run.tag
            )
            .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read a TREC run file; malformed lines, non-contiguous ranks, and
/// score inversions are reported with their line number.
pub fn read_run(path: &Path) -> Result<RunFile> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut per_query: BTreeMap<String, Vec<(usize, usize, String, f64)>> = BTreeMap::new();
    let mut tag = String::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::parse_line(
                path,
                i + 1,
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let rank: usize = fields[3]
            .parse()
            .map_err(|_| Error::parse_line(path, i + 1, format!("bad rank `{}`", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .map_err(|_| Error::parse_line(path, i + 1, format!("bad score `{}`", fields[4])))?;
        if tag.is_empty() {
            tag = fields[5].to_owned();
        }
        per_query
            .entry(fields[0].to_owned())
            .or_default()
            .push((i + 1, rank, fields[2].to_owned(), score));
    }
    let mut rankings = BTreeMap::new();
    for (query_id, mut entries) in per_query {
        entries.sort_by_key(|&(_, rank, _, _)| rank);
        let mut out = Vec::with_capacity(entries.len());
        let mut prev_score = f64::INFINITY;
        for (expected, (line_no, rank, doc_id, score)) in entries.into_iter().enumerate() {
            if rank != expected + 1 {
                return Err(Error::parse_line(
                    path,
                    line_no,
                    format!("rank {rank} breaks contiguity (expected {})", expected + 1),
                ));
            }
            if score > prev_score {
                return Err(Error::parse_line(
                    path,
                    line_no,
                    "scores must be non-increasing with rank",
                ));
            }
            prev_score = score;
            out.push((doc_id, score));
        }
        rankings.insert(query_id, out);
    }
    Ok(RunFile { tag, rankings })
}

/// Per-query metric values with their mean.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub n_queries: usize,
    /// run queries skipped because no judgments exist for them
    pub excluded: usize,
}

fn finish_report(per_query: BTreeMap<String, f64>, excluded: usize) -> MetricReport {
    let n_queries = per_query.len();
    let mean = if n_queries > 0 {
        per_query.values().sum::<f64>() / n_queries as f64
    } else {
        0.0
    };
    MetricReport {
        per_query,
        mean,
        n_queries,
        excluded,
    }
}

/// Reciprocal rank of the first relevant (grade >= 1) document within the
/// cutoff, zero otherwise; averaged over run queries present in the qrels.
pub fn mrr(run: &RunFile, qrels: &Qrels, cutoff: usize) -> MetricReport {
    assert!(cutoff >= 1, "cutoff must be at least 1");
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    for (query_id, entries) in &run.rankings {
        if !qrels.contains_query(query_id) {
            excluded += 1;
            continue;
        }
        let mut value = 0.0;
        for (i, (doc_id, _)) in entries.iter().take(cutoff).enumerate() {
            if qrels.is_relevant(query_id, doc_id) {
                value = 1.0 / (i + 1) as f64;
                break;
            }
        }
        per_query.insert(query_id.clone(), value);
    }
    finish_report(per_query, excluded)
}

/// NDCG@k with linear gain, ideal computed from all judged grades.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> MetricReport {
    assert!(k >= 1, "k must be at least 1");
    let mut per_query = BTreeMap::new();
    let mut excluded = 0;
    for (query_id, entries) in &run.rankings {
        if !qrels.contains_query(query_id) {
            excluded += 1;
            continue;
        }
        let dcg: f64 = entries
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, (doc_id, _))| {
                let grade = qrels.grade(query_id, doc_id).unwrap_or(0) as f64;
                grade / ((i + 2) as f64).log2()
            })
            .sum();
        let mut grades: Vec<u32> = qrels
            .judgments(query_id)
            .map(|(_, g)| g)
            .filter(|&g| g > 0)
            .collect();
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| g as f64 / ((i + 2) as f64).log2())
            .sum();
        per_query.insert(
            query_id.clone(),
            if idcg > 0.0 { dcg / idcg } else { 0.0 },
        );
    }
    finish_report(per_query, excluded)
}

/// Arithmetic mean of per-query values across seeds; the query sets must
/// match exactly.
pub fn aggregate_seeds(seeds: &[BTreeMap<String, f64>]) -> Result<BTreeMap<String, f64>> {
    let Some(first) = seeds.first() else {
        return Err(Error::MismatchedQuerySets);
    };
    for other in &seeds[1..] {
        if other.len() != first.len() || !other.keys().eq(first.keys()) {
            return Err(Error::MismatchedQuerySets);
        }
    }
    let mut out = BTreeMap::new();
    for query in first.keys() {
        let sum: f64 = seeds.iter().map(|s| s[query]).sum();
        out.insert(query.clone(), sum / seeds.len() as f64);
    }
    Ok(out)
}

/// Result of a paired two-sided t-test.
#[derive(Clone, Copy, Debug)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub n: usize,
}

/// Paired two-sided t-test over per-query values, pairing on common queries.
/// Zero-variance differences degenerate to p = 1 when the mean difference is
/// zero and p = 0 otherwise.
pub fn paired_ttest(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<TTestResult> {
    let diffs: Vec<f64> = a
        .iter()
        .filter_map(|(q, &va)| b.get(q).map(|&vb| va - vb))
        .collect();
    let n = diffs.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult { t: 0.0, p: 1.0, n }
        } else {
            TTestResult {
                t: f64::INFINITY.copysign(mean),
                p: 0.0,
                n,
            }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let df = (n - 1) as f64;
    let p = student_t_two_sided_p(t, df);
    Ok(TTestResult { t, p, n })
}

/// Two-sided p-value of a Student-t statistic:
/// `I_{df/(df+t^2)}(df/2, 1/2)` via the regularized incomplete beta.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
}

/// ln Gamma via the Lanczos approximation (g = 7, n = 9), |error| < 1e-13
/// on the positive reals used here.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-30;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Render the standard metric report: `metric<TAB>mean<TAB>n_queries`.
pub fn format_metric_report(metric: &str, report: &MetricReport) -> String {
    format!("{metric}\t{:.6}\t{}", report.mean, report.n_queries)
}

/// Per-query TSV body: `query_id<TAB>value` per line.
pub fn format_per_query(report: &MetricReport) -> String {
    let mut out = String::new();
    for (query, value) in &report.per_query {
        out.push_str(&format!("{query}\t{value:.6}\n"));
    }
    out
}
