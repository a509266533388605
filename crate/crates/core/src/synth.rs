//! Generated corpora with planted relevance, used by tests, benchmarks and
//! the demo.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{RawDoc, RawQuery, Vocabulary};
use crate::embed::EmbeddingTable;
use crate::error::Result;
use crate::eval::QRels;
use crate::rng::{self, Stream};

/// Documents, queries, judgments and word vectors for every generated word.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub docs: Vec<RawDoc>,
    pub queries: Vec<RawQuery>,
    pub qrels: QRels,
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl SyntheticCorpus {
    pub fn embeddings(&self, vocab: &Vocabulary) -> Result<EmbeddingTable> {
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        let mut table = EmbeddingTable::empty(vocab.len(), dim);
        for (word, v) in &self.vectors {
            if let Some(id) = vocab.id(word) {
                table.set(id, v)?;
            }
        }
        Ok(table)
    }

    /// word2vec text format.
    pub fn write_vectors(&self, mut w: impl Write) -> std::io::Result<()> {
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        writeln!(w, "{} {dim}", self.vectors.len())?;
        for (word, v) in &self.vectors {
            write!(w, "{word}")?;
            for x in v {
                write!(w, " {x:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn write_corpus(&self, mut w: impl Write) -> std::io::Result<()> {
        for d in &self.docs {
            writeln!(w, "{}", serde_json::to_string(d).expect("docs serialize"))?;
        }
        Ok(())
    }

    pub fn write_queries(&self, mut w: impl Write) -> std::io::Result<()> {
        for q in &self.queries {
            writeln!(w, "{}\t{}", q.query_id, q.text)?;
        }
        Ok(())
    }
}

struct Words<R> {
    rng: R,
    dim: usize,
    vectors: Vec<(String, Vec<f64>)>,
}

impl<R: Rng> Words<R> {
    fn random_unit(&mut self) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| self.rng.random_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }

    fn add(&mut self, name: String, v: Vec<f64>) -> String {
        self.vectors.push((name.clone(), v));
        name
    }

    fn fresh(&mut self, name: String) -> String {
        let v = self.random_unit();
        self.add(name, v)
    }

    /// A word whose vector has cosine close to `cos` with `base`'s.
    fn near(&mut self, name: String, base: &str, cos: f64) -> String {
        let b = self.vectors.iter().find(|(w, _)| w == base).expect("base word exists").1.clone();
        let r = self.random_unit();
        let dot: f64 = r.iter().zip(&b).map(|(x, y)| x * y).sum();
        let orth: Vec<f64> = r.iter().zip(&b).map(|(x, y)| x - dot * y).collect();
        let on = orth.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = (1.0 - cos * cos).sqrt();
        let v = b.iter().zip(&orth).map(|(x, o)| cos * x + s * o / on).collect();
        self.add(name, v)
    }
}

fn filler_doc(rng: &mut impl Rng, fillers: &[String], len: usize) -> Vec<String> {
    (0..len).map(|_| fillers[rng.random_range(0..fillers.len())].clone()).collect()
}

/// Writes each segment over the document at evenly spaced, shuffled slots
/// so that different segments never share a co-occurrence window.
fn place(rng: &mut impl Rng, doc: &mut [String], segments: Vec<Vec<String>>, spacing: usize) {
    let slots = doc.len() / spacing;
    assert!(segments.len() <= slots, "document too short for its segments");
    let mut starts: Vec<usize> = (0..slots).map(|s| s * spacing + 1).collect();
    starts.shuffle(rng);
    for (seg, start) in segments.into_iter().zip(starts) {
        for (i, tok) in seg.into_iter().enumerate() {
            doc[start + i] = tok;
        }
    }
}

fn shuffled_ids(rng: &mut impl Rng, n: usize, prefix: &str) -> Vec<String> {
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    ids.into_iter().map(|i| format!("{prefix}{i:05}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverfitSpec {
    pub queries: usize,
    pub positives: usize,
    pub negatives: usize,
    pub doc_len: usize,
    pub correlated: usize,
    pub dim: usize,
    pub fillers: usize,
}

impl Default for OverfitSpec {
    fn default() -> Self {
        Self {
            queries: 8,
            positives: 2,
            negatives: 3,
            doc_len: 40,
            correlated: 4,
            dim: 32,
            fillers: 400,
        }
    }
}

/// Two-term queries whose positive documents contain several words close to
/// the query terms spread through the text; negatives contain the query
/// terms among unrelated words only.
pub fn overfit_corpus(spec: &OverfitSpec, seed: u64) -> SyntheticCorpus {
    let mut words = Words {
        rng: rng::stream(seed, Stream::Synthetic),
        dim: spec.dim,
        vectors: Vec::new(),
    };
    let fillers: Vec<String> = (0..spec.fillers).map(|i| words.fresh(format!("f{i}"))).collect();
    let per_query = spec.positives + spec.negatives;
    let ids = shuffled_ids(&mut words.rng, spec.queries * per_query, "d");
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = QRels::new();
    for q in 0..spec.queries {
        let qa = words.fresh(format!("qa{q}"));
        let qb = words.fresh(format!("qb{q}"));
        let related: Vec<String> = (0..spec.correlated)
            .map(|i| {
                let base = if i % 2 == 0 { qa.clone() } else { qb.clone() };
                words.near(format!("c{q}x{i}"), &base, 0.8)
            })
            .collect();
        queries.push(RawQuery {
            query_id: format!("q{q}"),
            text: format!("{qa} {qb}"),
        });
        for d in 0..per_query {
            let id = ids[q * per_query + d].clone();
            let mut doc = filler_doc(&mut words.rng, &fillers, spec.doc_len);
            let mut segs = vec![vec![qa.clone()], vec![qb.clone()]];
            let positive = d < spec.positives;
            if positive {
                segs.extend(related.iter().map(|w| vec![w.clone()]));
            }
            place(&mut words.rng, &mut doc, segs, spec.doc_len / (spec.correlated + 2));
            qrels.insert(format!("q{q}"), id.clone(), u32::from(positive));
            docs.push(RawDoc {
                doc_id: id,
                text: doc.join(" "),
            });
        }
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    SyntheticCorpus {
        docs,
        queries,
        qrels,
        vectors: words.vectors,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeSpec {
    pub queries: usize,
    /// Relevant documents of each kind per query.
    pub local: usize,
    pub bridged: usize,
    pub chained: usize,
    /// Non-relevant documents per query, two thirds of them decoys.
    pub negatives: usize,
    pub doc_len: usize,
    pub dim: usize,
    pub fillers: usize,
    pub synonym_cos: f64,
}

impl Default for BridgeSpec {
    fn default() -> Self {
        Self {
            queries: 50,
            local: 2,
            bridged: 2,
            chained: 2,
            negatives: 34,
            doc_len: 60,
            dim: 64,
            fillers: 20000,
            synonym_cos: 0.8,
        }
    }
}

/// Relevance that is visible only through word co-occurrence structure.
///
/// Every document of a query holds the same words: both query terms once,
/// one near-synonym of each, and two link words twice each, all placed in
/// separate slots at least a window apart. Relevant documents arrange them
/// so that the query terms are linked:
///
/// * local: each query term sits next to the other term's synonym
/// * bridged: both query terms sit next to the same link word
/// * chained: query term, link word, second link word, other query term
///
/// Non-relevant documents keep every slot apart, link only one query term, or
/// give each query term its own link word with the two links kept apart.
/// Only query terms and their synonyms have vectors; every other word has a
/// similarity of 0 to the query.
pub fn bridge_corpus(spec: &BridgeSpec, seed: u64) -> SyntheticCorpus {
    let mut words = Words {
        rng: rng::stream(seed, Stream::Synthetic),
        dim: spec.dim,
        vectors: Vec::new(),
    };
    let fillers: Vec<String> = (0..spec.fillers).map(|i| format!("f{i}")).collect();
    let per_query = spec.local + spec.bridged + spec.chained + spec.negatives;
    let ids = shuffled_ids(&mut words.rng, spec.queries * per_query, "d");
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = QRels::new();
    let mut link_count = 0usize;
    for q in 0..spec.queries {
        let qa = words.fresh(format!("qa{q}"));
        let qb = words.fresh(format!("qb{q}"));
        let sa = words.near(format!("sa{q}"), &qa, spec.synonym_cos);
        let sb = words.near(format!("sb{q}"), &qb, spec.synonym_cos);
        queries.push(RawQuery {
            query_id: format!("q{q}"),
            text: format!("{qa} {qb}"),
        });
        for d in 0..per_query {
            let b1 = format!("l{link_count}");
            let b2 = format!("l{}", link_count + 1);
            link_count += 2;
            let s = |x: &String| x.clone();
            let (segs, grade) = if d < spec.local {
                (
                    vec![
                        vec![s(&qa), s(&sb)],
                        vec![s(&sa), s(&qb)],
                        vec![s(&b1), s(&b2)],
                        vec![s(&b1), s(&b2)],
                    ],
                    1,
                )
            } else if d < spec.local + spec.bridged {
                (
                    vec![
                        vec![s(&qa), s(&b1)],
                        vec![s(&b1), s(&qb)],
                        vec![s(&b2)],
                        vec![s(&b2)],
                        vec![s(&sa)],
                        vec![s(&sb)],
                    ],
                    1,
                )
            } else if d < spec.local + spec.bridged + spec.chained {
                (
                    vec![
                        vec![s(&qa), s(&b1)],
                        vec![s(&b1), s(&b2)],
                        vec![s(&b2), s(&qb)],
                        vec![s(&sa)],
                        vec![s(&sb)],
                    ],
                    1,
                )
            } else if (d - spec.local - spec.bridged - spec.chained) % 3 == 0 {
                (
                    vec![
                        vec![s(&qa)],
                        vec![s(&qb)],
                        vec![s(&sa)],
                        vec![s(&sb)],
                        vec![s(&b1), s(&b2)],
                        vec![s(&b1), s(&b2)],
                    ],
                    0,
                )
            } else if (d - spec.local - spec.bridged - spec.chained) % 3 == 1 {
                (
                    vec![
                        vec![s(&qa), s(&b1)],
                        vec![s(&b1)],
                        vec![s(&b2)],
                        vec![s(&b2), s(&qb)],
                        vec![s(&sa)],
                        vec![s(&sb)],
                    ],
                    0,
                )
            } else {
                let (near, far) = if words.rng.random_bool(0.5) { (&qa, &qb) } else { (&qb, &qa) };
                (
                    vec![
                        vec![s(near), s(&b1)],
                        vec![s(&b1), s(&b2)],
                        vec![s(&b2)],
                        vec![s(far)],
                        vec![s(&sa)],
                        vec![s(&sb)],
                    ],
                    0,
                )
            };
            let id = ids[q * per_query + d].clone();
            let mut doc = filler_doc(&mut words.rng, &fillers, spec.doc_len);
            place(&mut words.rng, &mut doc, segs, spec.doc_len / 6);
            qrels.insert(format!("q{q}"), id.clone(), grade);
            docs.push(RawDoc {
                doc_id: id,
                text: doc.join(" "),
            });
        }
    }
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    SyntheticCorpus {
        docs,
        queries,
        qrels,
        vectors: words.vectors,
    }
}
