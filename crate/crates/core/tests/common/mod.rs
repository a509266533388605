//! Independent reference implementations used as oracles by the integration
//! tests. Everything here is deliberately naive: dense matrices, full sorts,
//! direct counting.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use std::fs;
use std::path::Path;

use rand::Rng;
use wgrank::corpus::TermId;
use wgrank::model::ModelParams;
use wgrank::synth::SyntheticCorpus;
use wgrank::tensor::Mat;

/// Unique terms in first-occurrence order and pair counts keyed `(i, j)`,
/// `i < j`, found by listing every window.
pub fn brute_graph(tokens: &[TermId], window: usize) -> (Vec<TermId>, BTreeMap<(usize, usize), u32>) {
    let mut nodes: Vec<TermId> = Vec::new();
    for &t in tokens {
        if !nodes.contains(&t) {
            nodes.push(t);
        }
    }
    let node = |t: TermId| nodes.iter().position(|&x| x == t).unwrap();
    let mut windows: Vec<&[TermId]> = Vec::new();
    if tokens.len() <= window {
        windows.push(tokens);
    } else {
        for start in 0..=tokens.len() - window {
            windows.push(&tokens[start..start + window]);
        }
    }
    let mut counts = BTreeMap::new();
    for w in windows {
        let mut pairs = BTreeSet::new();
        for a in 0..w.len() {
            for b in 0..w.len() {
                let (i, j) = (node(w[a]), node(w[b]));
                if i < j {
                    pairs.insert((i, j));
                }
            }
        }
        for p in pairs {
            *counts.entry(p).or_insert(0) += 1;
        }
    }
    (nodes, counts)
}

/// `D^-1/2 A D^-1/2` on a dense matrix; isolated nodes get zero rows.
pub fn dense_normalize(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if deg[i] > 0.0 && deg[j] > 0.0 {
                out[i][j] = a[i][j] / deg[i].sqrt() / deg[j].sqrt();
            }
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn get(m: &Mat, i: usize, j: usize) -> f64 {
    m[(i, j)]
}

/// Relevance score computed with plain loops over dense arrays.
pub fn dense_relevance(params: &ModelParams, adj: &[Vec<f64>], s: &[Vec<f64>], idf: &[f64]) -> f64 {
    let hyper = params.hyper;
    let n = adj.len();
    let mm = hyper.m_max;
    let m = s.first().map_or(idf.len(), |r| r.len()).min(mm);

    let mut h = vec![vec![0.0; mm]; n];
    for i in 0..n {
        for j in 0..m {
            h[i][j] = s[i][j];
        }
    }

    for step in 0..hyper.layers {
        let l = if hyper.shared_weights { &params.layers[0] } else { &params.layers[step] };
        let mut a = vec![vec![0.0; mm]; n];
        for i in 0..n {
            for r in 0..m {
                let mut sum = 0.0;
                for v in 0..n {
                    for c in 0..mm {
                        sum += adj[i][v] * get(&l.w_a, r, c) * h[v][c];
                    }
                }
                a[i][r] = sum;
            }
        }
        let mut next = vec![vec![0.0; mm]; n];
        for i in 0..n {
            let mut z = vec![0.0; mm];
            let mut rg = vec![0.0; mm];
            for r in 0..mm {
                let mut zs = l.b_z[r];
                let mut rs = l.b_r[r];
                for c in 0..mm {
                    zs += get(&l.w_z, r, c) * a[i][c] + get(&l.u_z, r, c) * h[i][c];
                    rs += get(&l.w_r, r, c) * a[i][c] + get(&l.u_r, r, c) * h[i][c];
                }
                z[r] = sigmoid(zs);
                rg[r] = sigmoid(rs);
            }
            for r in 0..mm {
                let mut hs = l.b_h[r];
                for c in 0..mm {
                    hs += get(&l.w_h, r, c) * a[i][c] + get(&l.u_h, r, c) * (rg[c] * h[i][c]);
                }
                let cand = hs.tanh();
                next[i][r] = if r < m { z[r] * cand + (1.0 - z[r]) * h[i][r] } else { 0.0 };
            }
        }
        h = next;
    }

    let denom: f64 = idf[..m].iter().map(|v| (params.c * v).exp()).sum();
    let mut rel = 0.0;
    for j in 0..m {
        let mut col: Vec<f64> = (0..n).map(|i| h[i][j]).collect();
        col.sort_by(|a, b| b.partial_cmp(a).unwrap());
        col.resize(hyper.k, 0.0);
        let mut u = params.b_x;
        for (x, w) in col.iter().zip(&params.w_x) {
            u += x * w;
        }
        rel += (params.c * idf[j]).exp() / denom * u.tanh();
    }
    rel
}

/// Random symmetric non-negative weights, some of them zero.
pub fn random_dense_adjacency(rng: &mut impl Rng, n: usize, p: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(p) {
                let w = rng.random_range(1..5) as f64;
                a[i][j] = w;
                a[j][i] = w;
            }
        }
    }
    a
}

pub fn edges_of(a: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut e = Vec::new();
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            if a[i][j] != 0.0 {
                e.push((i, j, a[i][j]));
            }
        }
    }
    e
}

/// Randomizes every parameter, including biases, `b_x` and `c`.
pub fn randomize(params: &mut ModelParams, rng: &mut impl Rng) {
    for (_, t) in params.tensors_mut() {
        for v in t {
            *v = rng.random_range(-0.8..0.8);
        }
    }
}

pub fn dcg(ranked: &[&str], grades: &BTreeMap<String, u32>, cutoff: usize) -> f64 {
    let mut total = 0.0;
    for (i, d) in ranked.iter().enumerate() {
        if i >= cutoff {
            break;
        }
        let g = grades.get(*d).copied().unwrap_or(0);
        total += (2f64.powi(g as i32) - 1.0) / ((i + 2) as f64).log2();
    }
    total
}

pub fn brute_ndcg(ranked: &[&str], grades: &BTreeMap<String, u32>, cutoff: usize) -> f64 {
    let mut ideal: Vec<(String, u32)> = grades.iter().map(|(d, &g)| (d.clone(), g)).collect();
    ideal.sort_by(|a, b| b.1.cmp(&a.1));
    let ideal_ids: Vec<&str> = ideal.iter().map(|(d, _)| d.as_str()).collect();
    let idcg = dcg(&ideal_ids, grades, cutoff);
    if idcg == 0.0 {
        0.0
    } else {
        dcg(ranked, grades, cutoff) / idcg
    }
}

pub fn brute_precision(ranked: &[&str], grades: &BTreeMap<String, u32>, cutoff: usize) -> f64 {
    let hits = ranked
        .iter()
        .take(cutoff)
        .filter(|d| grades.get(**d).copied().unwrap_or(0) > 0)
        .count();
    hits as f64 / cutoff as f64
}

/// Collection statistics recomputed by scanning raw token lists.
pub struct BruteStats<'a> {
    pub docs: &'a [Vec<TermId>],
    df: BTreeMap<TermId, usize>,
    cf: BTreeMap<TermId, usize>,
    coll_len: usize,
}

impl<'a> BruteStats<'a> {
    pub fn new(docs: &'a [Vec<TermId>]) -> Self {
        let mut df = BTreeMap::new();
        let mut cf = BTreeMap::new();
        for d in docs {
            let distinct: BTreeSet<TermId> = d.iter().copied().collect();
            for t in distinct {
                *df.entry(t).or_insert(0) += 1;
            }
            for &t in d {
                *cf.entry(t).or_insert(0) += 1;
            }
        }
        Self {
            docs,
            df,
            cf,
            coll_len: docs.iter().map(Vec::len).sum(),
        }
    }

    pub fn n(&self) -> usize {
        self.docs.len()
    }

    pub fn df(&self, t: TermId) -> usize {
        self.df.get(&t).copied().unwrap_or(0)
    }

    pub fn cf(&self, t: TermId) -> usize {
        self.cf.get(&t).copied().unwrap_or(0)
    }

    pub fn tf(&self, t: TermId, d: usize) -> usize {
        self.docs[d].iter().filter(|&&x| x == t).count()
    }

    /// BM25 with k1 = 1.2, b = 0.75, evaluated term by term in query order.
    pub fn bm25(&self, query: &[TermId], d: usize) -> f64 {
        let (k1, b) = (1.2, 0.75);
        let n = self.n() as f64;
        let avgdl = self.coll_len as f64 / n;
        let dl = self.docs[d].len() as f64;
        let mut score = 0.0;
        for &t in query {
            let tf = self.tf(t, d) as f64;
            if tf == 0.0 {
                continue;
            }
            let df = self.df(t) as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / avgdl));
        }
        score
    }

    /// Dirichlet-smoothed query likelihood; terms absent from the collection
    /// contribute nothing.
    pub fn ql(&self, query: &[TermId], d: usize, mu: f64) -> f64 {
        let dl = self.docs[d].len() as f64;
        let mut score = 0.0;
        for &t in query {
            let cf = self.cf(t);
            if cf == 0 {
                continue;
            }
            let p_c = cf as f64 / self.coll_len as f64;
            score += ((self.tf(t, d) as f64 + mu * p_c) / (dl + mu)).ln();
        }
        score
    }
}

/// Writes corpus.jsonl, queries.tsv, vectors.txt and qrels.txt into `dir`.
pub fn write_inputs(c: &SyntheticCorpus, dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let mut buf = Vec::new();
    c.write_corpus(&mut buf).unwrap();
    fs::write(dir.join("corpus.jsonl"), &buf).unwrap();
    buf.clear();
    c.write_queries(&mut buf).unwrap();
    fs::write(dir.join("queries.tsv"), &buf).unwrap();
    buf.clear();
    c.write_vectors(&mut buf).unwrap();
    fs::write(dir.join("vectors.txt"), &buf).unwrap();
    fs::write(dir.join("qrels.txt"), c.qrels.to_trec_string()).unwrap();
}
