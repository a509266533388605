//! Ranking metrics, TREC qrels/run parsing and cross-validation folds.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::BufRead;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::retrieve::{RunList, ScoredDoc};
use crate::rng::{self, Stream};

pub const DEFAULT_CUTOFF: usize = 20;

/// Graded judgments for one query, keyed by doc id.
pub type Judgments = BTreeMap<String, u32>;

/// Relevance judgments. Unjudged pairs are absent, which is distinct from a
/// zero grade.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QRels {
    judgments: BTreeMap<String, Judgments>,
}

impl QRels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) {
        self.judgments
            .entry(query_id.into())
            .or_default()
            .insert(doc_id.into(), grade);
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    pub fn judgments(&self, query_id: &str) -> Option<&Judgments> {
        self.judgments.get(query_id)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    /// `query_id 0 doc_id grade` lines. Negative grades (e.g. spam labels) are
    /// recorded as judged non-relevant.
    pub fn parse(reader: impl BufRead, source: &str) -> Result<Self> {
        let mut qrels = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::parse(source, i + 1, format!("expected 4 fields, found {}", f.len())));
            }
            f[1].parse::<i64>()
                .map_err(|_| Error::parse(source, i + 1, "iteration field is not an integer"))?;
            let grade: i64 = f[3]
                .parse()
                .map_err(|_| Error::parse(source, i + 1, format!("bad grade `{}`", f[3])))?;
            qrels.insert(f[0], f[2], grade.max(0) as u32);
        }
        Ok(qrels)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(std::io::BufReader::new(file), &path.display().to_string())
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                out.push_str(&format!("{q} 0 {d} {g}\n"));
            }
        }
        out
    }
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// Ideal DCG at `cutoff` from the full judged set.
pub fn ideal_dcg(judged: &Judgments, cutoff: usize) -> f64 {
    let mut grades: Vec<u32> = judged.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    grades
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum()
}

/// nDCG at `cutoff` of a ranked list of doc ids; 0 when the ideal DCG is 0.
pub fn ndcg_at<S: AsRef<str>>(ranked: &[S], judged: &Judgments, cutoff: usize) -> f64 {
    let idcg = ideal_dcg(judged, cutoff);
    if idcg == 0.0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, d)| gain(judged.get(d.as_ref()).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    dcg / idcg
}

/// Fraction of the top `cutoff` that is relevant, always over `cutoff`.
pub fn precision_at<S: AsRef<str>>(ranked: &[S], judged: &Judgments, cutoff: usize) -> f64 {
    if cutoff == 0 {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(cutoff)
        .filter(|d| judged.get(d.as_ref()).is_some_and(|&g| g > 0))
        .count();
    hits as f64 / cutoff as f64
}

fn doc_ids(docs: &[ScoredDoc]) -> Vec<&str> {
    docs.iter().map(|d| d.doc_id.as_str()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Count queries whose judged set has no relevant document (scored 0) in
    /// the means instead of excluding them.
    pub include_zero_idcg: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            include_zero_idcg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, BTreeMap<String, f64>>,
    pub aggregate: BTreeMap<String, f64>,
    pub num_queries: usize,
    /// Queries in the run that were left out of the means.
    pub excluded: Vec<String>,
}

impl EvalReport {
    pub fn mean(&self, metric: &str) -> f64 {
        self.aggregate.get(metric).copied().unwrap_or(0.0)
    }
}

pub fn ndcg_name(cutoff: usize) -> String {
    format!("ndcg@{cutoff}")
}

pub fn precision_name(cutoff: usize) -> String {
    format!("P@{cutoff}")
}

/// Per-query nDCG and precision at each cutoff, plus unweighted means.
pub fn evaluate(run: &RunList, qrels: &QRels, cutoffs: &[usize], options: EvalOptions) -> EvalReport {
    let mut per_query = BTreeMap::new();
    let mut excluded = Vec::new();
    for (qid, docs) in run.iter() {
        let Some(judged) = qrels.judgments(qid) else {
            excluded.push(qid.to_string());
            continue;
        };
        if !options.include_zero_idcg && !judged.values().any(|&g| g > 0) {
            excluded.push(qid.to_string());
            continue;
        }
        let ids = doc_ids(docs);
        let mut metrics = BTreeMap::new();
        for &c in cutoffs {
            metrics.insert(ndcg_name(c), ndcg_at(&ids, judged, c));
            metrics.insert(precision_name(c), precision_at(&ids, judged, c));
        }
        per_query.insert(qid.to_string(), metrics);
    }
    let mut aggregate = BTreeMap::new();
    if !per_query.is_empty() {
        let names: BTreeSet<String> = per_query.values().flat_map(|m| m.keys().cloned()).collect();
        for name in names {
            let sum: f64 = per_query.values().map(|m| m[&name]).sum();
            aggregate.insert(name, sum / per_query.len() as f64);
        }
    }
    EvalReport {
        num_queries: per_query.len(),
        per_query,
        aggregate,
        excluded,
    }
}

/// Mean nDCG@`cutoff` over queries of `run` with at least one relevant
/// judgment.
pub fn mean_ndcg(run: &RunList, qrels: &QRels, cutoff: usize) -> f64 {
    evaluate(run, qrels, &[cutoff], EvalOptions::default()).mean(&ndcg_name(cutoff))
}

#[derive(Debug, Clone, PartialEq)]
struct RunLine {
    doc_id: String,
    rank: u64,
    score: f64,
}

/// Parses a TREC run (`query_id Q0 doc_id rank score tag`). Each query is
/// re-sorted by descending score, then rank, then doc id.
pub fn parse_run(reader: impl BufRead, source: &str) -> Result<RunList> {
    let mut by_query: BTreeMap<String, Vec<RunLine>> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(source, i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let rank: u64 = f[3]
            .parse()
            .map_err(|_| Error::parse(source, i + 1, format!("bad rank `{}`", f[3])))?;
        let score: f64 = f[4]
            .parse()
            .map_err(|_| Error::parse(source, i + 1, format!("bad score `{}`", f[4])))?;
        if !score.is_finite() {
            return Err(Error::parse(source, i + 1, "non-finite score"));
        }
        if !seen.insert((f[0].to_string(), f[2].to_string())) {
            return Err(Error::parse(source, i + 1, format!("document `{}` listed twice", f[2])));
        }
        by_query.entry(f[0].to_string()).or_default().push(RunLine {
            doc_id: f[2].to_string(),
            rank,
            score,
        });
    }
    let mut run = RunList::new();
    for (qid, mut lines) in by_query {
        lines.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.rank.cmp(&b.rank))
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        run.insert_ranked(
            qid,
            lines
                .into_iter()
                .map(|l| ScoredDoc {
                    doc_id: l.doc_id,
                    score: l.score,
                })
                .collect(),
        );
    }
    Ok(run)
}

pub fn read_run(path: &Path) -> Result<RunList> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_run(std::io::BufReader::new(file), &path.display().to_string())
}

/// Strict check of a run file as written by this crate: literal `Q0`, ranks
/// 1, 2, 3, ... per query, scores with six decimals and non-increasing.
pub fn validate_run_strict(text: &str) -> Result<()> {
    let mut last: Option<(String, u64, f64)> = None;
    for (i, line) in text.lines().enumerate() {
        let bad = |m: String| Error::parse("run", i + 1, m);
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 6 || f.iter().any(|s| s.is_empty()) {
            return Err(bad("expected 6 single-space separated fields".into()));
        }
        if f[1] != "Q0" {
            return Err(bad(format!("second field must be Q0, found `{}`", f[1])));
        }
        let rank: u64 = f[3].parse().map_err(|_| bad(format!("bad rank `{}`", f[3])))?;
        let decimals = f[4].split_once('.').map(|(_, d)| d.len());
        if decimals != Some(6) {
            return Err(bad(format!("score `{}` must have six decimals", f[4])));
        }
        let score: f64 = f[4].parse().map_err(|_| bad(format!("bad score `{}`", f[4])))?;
        let expected = match &last {
            Some((q, r, s)) if q == f[0] => {
                if score > *s {
                    return Err(bad("scores must be non-increasing within a query".into()));
                }
                r + 1
            }
            _ => 1,
        };
        if rank != expected {
            return Err(bad(format!("rank {rank}, expected {expected}")));
        }
        last = Some((f[0].to_string(), rank, score));
    }
    Ok(())
}

/// Strict check of qrels text: four fields, integer iteration and grade.
pub fn validate_qrels_strict(text: &str) -> Result<()> {
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 4
            || f[1].parse::<i64>().is_err()
            || f[3].parse::<i64>().is_err()
            || f[0].is_empty()
            || f[2].is_empty()
        {
            return Err(Error::parse("qrels", i + 1, "malformed qrels line"));
        }
    }
    Ok(())
}

/// Query ids partitioned into folds (sizes differ by at most one).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Vec<String>>,
    seed: u64,
}

/// Query ids used for training, checkpoint selection and testing in one
/// rotation of the cross-validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rotation {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded shuffle followed by round-robin assignment.
pub fn kfold_split(query_ids: &[String], folds: usize, seed: u64) -> Result<FoldSplit> {
    if folds < 2 || query_ids.len() < folds {
        return Err(Error::TooFewQueries {
            queries: query_ids.len(),
            folds,
        });
    }
    let mut ids = query_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < folds {
        return Err(Error::TooFewQueries {
            queries: ids.len(),
            folds,
        });
    }
    ids.shuffle(&mut rng::stream(seed, Stream::Folds));
    let mut out = vec![Vec::new(); folds];
    for (i, id) in ids.into_iter().enumerate() {
        out[i % folds].push(id);
    }
    Ok(FoldSplit { folds: out, seed })
}

impl FoldSplit {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Fold `test` is held out for testing; one of the remaining folds,
    /// chosen by the split seed, is used for validation and the rest train.
    pub fn rotation(&self, test: usize) -> Rotation {
        let k = self.folds.len();
        let offset = 1 + (self.seed % (k as u64 - 1)) as usize;
        let validation = (test + offset) % k;
        let mut train = Vec::new();
        for (i, fold) in self.folds.iter().enumerate() {
            if i != test && i != validation {
                train.extend(fold.iter().cloned());
            }
        }
        Rotation {
            train,
            validation: self.folds[validation].clone(),
            test: self.folds[test].clone(),
        }
    }
}
