//! First-stage retrieval: inverted index, BM25, Dirichlet query likelihood
//! and ranked run lists.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, TermId, TokenizedDoc};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Term-frequency inverted index. Documents are numbered in insertion order
/// and every postings list is sorted by that number.
#[derive(Debug, Clone)]
pub struct PostingsIndex {
    doc_ids: Vec<String>,
    doc_lookup: HashMap<String, usize>,
    postings: Vec<Vec<Posting>>,
    doc_len: Vec<u32>,
    coll_freq: Vec<u64>,
    coll_len: u64,
    avg_doc_len: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

pub const DEFAULT_MU: f64 = 2000.0;
pub const DEFAULT_CANDIDATES: usize = 100;

/// First-stage scoring function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scorer {
    Bm25(Bm25Params),
    QueryLikelihood { mu: f64 },
}

pub fn build_index<'a>(docs: impl IntoIterator<Item = &'a TokenizedDoc>) -> Result<PostingsIndex> {
    let mut index = PostingsIndex {
        doc_ids: Vec::new(),
        doc_lookup: HashMap::new(),
        postings: Vec::new(),
        doc_len: Vec::new(),
        coll_freq: Vec::new(),
        coll_len: 0,
        avg_doc_len: 0.0,
    };
    let mut counts: BTreeMap<TermId, u32> = BTreeMap::new();
    for doc in docs {
        let d = index.doc_ids.len();
        if index.doc_lookup.insert(doc.doc_id.clone(), d).is_some() {
            return Err(Error::DuplicateDocId(doc.doc_id.clone()));
        }
        index.doc_ids.push(doc.doc_id.clone());
        counts.clear();
        for &t in &doc.tokens {
            *counts.entry(t).or_default() += 1;
        }
        for (&t, &tf) in &counts {
            if t.index() >= index.postings.len() {
                index.postings.resize_with(t.index() + 1, Vec::new);
                index.coll_freq.resize(t.index() + 1, 0);
            }
            index.postings[t.index()].push(Posting { doc: d as u32, tf });
            index.coll_freq[t.index()] += tf as u64;
        }
        index.doc_len.push(doc.tokens.len() as u32);
        index.coll_len += doc.tokens.len() as u64;
    }
    if index.doc_ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    index.avg_doc_len = index.coll_len as f64 / index.doc_ids.len() as f64;
    Ok(index)
}

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`
pub fn bm25_idf(num_docs: usize, df: usize) -> f64 {
    (1.0 + (num_docs as f64 - df as f64 + 0.5) / (df as f64 + 0.5)).ln()
}

/// One term's BM25 contribution.
pub fn bm25_term(idf: f64, tf: f64, doc_len: f64, avg_doc_len: f64, p: Bm25Params) -> f64 {
    idf * (tf * (p.k1 + 1.0)) / (tf + p.k1 * (1.0 - p.b + p.b * doc_len / avg_doc_len))
}

/// One term's Dirichlet-smoothed log likelihood.
pub fn ql_term(tf: f64, p_c: f64, doc_len: f64, mu: f64) -> f64 {
    ((tf + mu * p_c) / (doc_len + mu)).ln()
}

impl PostingsIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_id(&self, doc: usize) -> &str {
        &self.doc_ids[doc]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_index(&self, doc_id: &str) -> Option<usize> {
        self.doc_lookup.get(doc_id).copied()
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_len[doc]
    }

    pub fn postings(&self, term: TermId) -> &[Posting] {
        self.postings.get(term.index()).map_or(&[], Vec::as_slice)
    }

    pub fn doc_freq(&self, term: TermId) -> usize {
        self.postings(term).len()
    }

    pub fn coll_freq(&self, term: TermId) -> u64 {
        self.coll_freq.get(term.index()).copied().unwrap_or(0)
    }

    pub fn coll_len(&self) -> u64 {
        self.coll_len
    }

    pub fn tf(&self, term: TermId, doc: usize) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&(doc as u32), |p| p.doc)
            .map_or(0, |i| list[i].tf)
    }

    fn lookup(&self, doc_id: &str) -> Result<usize> {
        self.doc_index(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))
    }

    pub fn bm25_score(&self, query: &Query, doc_id: &str, params: Bm25Params) -> Result<f64> {
        let doc = self.lookup(doc_id)?;
        let mut score = 0.0;
        for term in query.ids().flatten() {
            let tf = self.tf(term, doc);
            if tf > 0 {
                let idf = bm25_idf(self.num_docs(), self.doc_freq(term));
                score += bm25_term(idf, tf as f64, self.doc_len[doc] as f64, self.avg_doc_len, params);
            }
        }
        Ok(score)
    }

    pub fn ql_score(&self, query: &Query, doc_id: &str, mu: f64) -> Result<f64> {
        let doc = self.lookup(doc_id)?;
        Ok(self.ql_score_at(query, doc, mu))
    }

    fn ql_score_at(&self, query: &Query, doc: usize, mu: f64) -> f64 {
        let mut score = 0.0;
        for term in query.ids().flatten() {
            let cf = self.coll_freq(term);
            if cf == 0 {
                continue;
            }
            let p_c = cf as f64 / self.coll_len as f64;
            score += ql_term(self.tf(term, doc) as f64, p_c, self.doc_len[doc] as f64, mu);
        }
        score
    }

    /// Top `k` documents matching at least one query term, by descending score
    /// with ties broken by ascending doc id.
    pub fn rank(&self, query: &Query, scorer: Scorer, k: usize) -> Vec<ScoredDoc> {
        let mut acc: BTreeMap<u32, f64> = BTreeMap::new();
        match scorer {
            Scorer::Bm25(params) => {
                for term in query.ids().flatten() {
                    let idf = bm25_idf(self.num_docs(), self.doc_freq(term));
                    for p in self.postings(term) {
                        let dl = self.doc_len[p.doc as usize] as f64;
                        *acc.entry(p.doc).or_insert(0.0) +=
                            bm25_term(idf, p.tf as f64, dl, self.avg_doc_len, params);
                    }
                }
            }
            Scorer::QueryLikelihood { mu } => {
                for term in query.ids().flatten() {
                    for p in self.postings(term) {
                        acc.entry(p.doc).or_insert(0.0);
                    }
                }
                for (&doc, score) in acc.iter_mut() {
                    *score = self.ql_score_at(query, doc as usize, mu);
                }
            }
        }
        let mut ranked: Vec<ScoredDoc> = acc
            .into_iter()
            .map(|(doc, score)| ScoredDoc {
                doc_id: self.doc_ids[doc as usize].clone(),
                score,
            })
            .collect();
        sort_ranked(&mut ranked);
        ranked.truncate(k);
        ranked
    }

    /// BM25 top-`k` candidate pool for re-ranking.
    pub fn top_candidates(&self, query: &Query, k: usize) -> Vec<ScoredDoc> {
        self.rank(query, Scorer::Bm25(Bm25Params::default()), k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Descending score, ascending doc id on ties.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

pub fn sort_ranked(docs: &mut [ScoredDoc]) {
    docs.sort_by(rank_order);
}

/// Ranked documents per query.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunList {
    queries: BTreeMap<String, Vec<ScoredDoc>>,
}

impl RunList {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a query's ranking, sorting it by the run tie rule.
    pub fn insert(&mut self, query_id: impl Into<String>, mut docs: Vec<ScoredDoc>) {
        sort_ranked(&mut docs);
        self.queries.insert(query_id.into(), docs);
    }

    /// Stores a ranking exactly in the order given.
    pub fn insert_ranked(&mut self, query_id: impl Into<String>, docs: Vec<ScoredDoc>) {
        self.queries.insert(query_id.into(), docs);
    }

    pub fn get(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// TREC run format: `query_id Q0 doc_id rank score tag`, ranks from 1,
    /// scores with six decimals.
    pub fn write_trec(&self, mut w: impl Write, tag: &str) -> std::io::Result<()> {
        for (qid, docs) in &self.queries {
            for (rank, d) in docs.iter().enumerate() {
                writeln!(w, "{} Q0 {} {} {:.6} {}", qid, d.doc_id, rank + 1, d.score, tag)?;
            }
        }
        Ok(())
    }

    pub fn to_trec_string(&self, tag: &str) -> String {
        let mut buf = Vec::new();
        self.write_trec(&mut buf, tag).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("run output is UTF-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QueryTerm;

    fn doc(id: &str, toks: &[u32]) -> TokenizedDoc {
        TokenizedDoc {
            doc_id: id.into(),
            tokens: toks.iter().map(|&t| TermId(t)).collect(),
            raw_length: toks.len(),
        }
    }

    fn query(ids: &[Option<u32>]) -> Query {
        Query {
            query_id: "q".into(),
            terms: ids
                .iter()
                .map(|id| QueryTerm {
                    surface: String::new(),
                    id: id.map(TermId),
                })
                .collect(),
            idf: vec![0.0; ids.len()],
        }
    }

    #[test]
    fn build_index_example() {
        let docs = [doc("d1", &[0, 1]), doc("d2", &[0])];
        let idx = build_index(&docs).unwrap();
        assert_eq!(idx.postings(TermId(0)), &[Posting { doc: 0, tf: 1 }, Posting { doc: 1, tf: 1 }]);
        assert_eq!(idx.postings(TermId(1)), &[Posting { doc: 0, tf: 1 }]);
        assert_eq!(idx.avg_doc_len(), 1.5);
    }

    #[test]
    fn index_errors_and_empty_docs() {
        let none: [TokenizedDoc; 0] = [];
        assert!(matches!(build_index(&none), Err(Error::EmptyCorpus)));
        let dup = [doc("d1", &[0]), doc("d1", &[1])];
        assert!(matches!(build_index(&dup), Err(Error::DuplicateDocId(_))));
        let idx = build_index(&[doc("d1", &[]), doc("d2", &[3])]).unwrap();
        assert_eq!(idx.doc_len(0), 0);
        assert_eq!(idx.postings(TermId(0)), &[]);
    }

    #[test]
    fn bm25_examples() {
        let idx = build_index(&[doc("d1", &[0]), doc("d2", &[1])]).unwrap();
        let p = Bm25Params::default();
        assert_eq!(idx.bm25_score(&query(&[Some(1)]), "d1", p).unwrap(), 0.0);
        let s = idx.bm25_score(&query(&[Some(0)]), "d1", p).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-12, "{s}");
        let twice = idx.bm25_score(&query(&[Some(0), Some(0)]), "d1", p).unwrap();
        assert!((twice - 2.0 * s).abs() < 1e-15);
        assert!(idx.bm25_score(&query(&[Some(0)]), "nope", p).is_err());
    }

    #[test]
    fn ql_examples() {
        let idx = build_index(&[doc("d1", &[0, 0, 1])]).unwrap();
        let s = idx.ql_score(&query(&[Some(0)]), "d1", DEFAULT_MU).unwrap();
        let expected = ((2.0 + 2000.0 * (2.0 / 3.0)) / 2003.0f64).ln();
        assert_eq!(s, expected);
        assert!((s - (-0.405465)).abs() < 1e-6, "{s}");
        assert_eq!(idx.ql_score(&query(&[Some(0)]), "d1", 0.0).unwrap(), (2.0f64 / 3.0).ln());
        // term with no collection occurrences is skipped
        assert_eq!(idx.ql_score(&query(&[Some(7), None]), "d1", 10.0).unwrap(), 0.0);
    }

    #[test]
    fn candidates_tie_break_and_empty() {
        let idx = build_index(&[doc("b", &[0]), doc("a", &[0]), doc("c", &[1])]).unwrap();
        let top = idx.top_candidates(&query(&[Some(0)]), 100);
        let ids: Vec<&str> = top.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "b"]);
        assert!(idx.top_candidates(&query(&[None]), 100).is_empty());
    }

    #[test]
    fn trec_format() {
        let mut run = RunList::new();
        run.insert(
            "q1",
            vec![
                ScoredDoc { doc_id: "d2".into(), score: 0.5 },
                ScoredDoc { doc_id: "d1".into(), score: 1.25 },
            ],
        );
        assert_eq!(run.to_trec_string("t"), "q1 Q0 d1 1 1.250000 t\nq1 Q0 d2 2 0.500000 t\n");
    }
}
