//! Browser demo for `wgrank`: builds a graph-of-word, shows how query signal
//! spreads over it, and ranks a small pasted collection.
//!
//! Every exported function takes plain strings and returns a JSON string so
//! the page needs no bindings beyond `wasm-bindgen` itself. The `*_json`
//! functions hold the logic and are what the native tests call.

use std::collections::BTreeSet;

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;
use wgrank::corpus::{
    build_vocabulary, default_stopwords, tokenize, FreqMode, Normalizer, Query, TokenizedDoc, Vocabulary,
};
use wgrank::error::{Error, Result};
use wgrank::graph::{build_document_graph, AdjacencyMode, DocumentGraph};
use wgrank::retrieve::{build_index, Bm25Params, Scorer, DEFAULT_MU};
use wgrank::tensor::Mat;

const MAX_STEPS: usize = 8;

fn single_doc_vocab(tokens: &[String]) -> Result<Vocabulary> {
    build_vocabulary([tokens], &default_stopwords(), 1, FreqMode::default())
}

fn graph_for(text: &str, window: usize, mode: AdjacencyMode) -> Result<(Vocabulary, DocumentGraph)> {
    let tokens = tokenize(text, &Normalizer::default());
    let vocab = single_doc_vocab(&tokens)?;
    let ids = vocab.encode(&tokens);
    if ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let graph = build_document_graph(&ids, window, mode)?;
    Ok((vocab, graph))
}

fn node_labels(vocab: &Vocabulary, graph: &DocumentGraph) -> Vec<String> {
    graph.node_terms.iter().map(|&t| vocab.term(t).to_string()).collect()
}

/// Nodes, co-occurrence edges and the normalized adjacency of `text`.
pub fn graph_of_word_json(text: &str, window: usize) -> Result<Value> {
    let (vocab, graph) = graph_for(text, window, AdjacencyMode::Graph)?;
    let edges: Vec<Value> = graph.edges.iter().map(|&(i, j, c)| json!([i, j, c])).collect();
    Ok(json!({
        "nodes": node_labels(&vocab, &graph),
        "edges": edges,
        "normalized": graph.norm_adjacency.to_dense(),
    }))
}

/// Exact-match signal between nodes and query terms, pushed through the
/// normalized adjacency `steps` times with no learned weights. Entry `t` of
/// `states` is the `n x M` matrix after `t` hops.
pub fn propagation_json(text: &str, query: &str, window: usize, mode: &str, steps: usize) -> Result<Value> {
    let mode: AdjacencyMode = mode.parse()?;
    if steps > MAX_STEPS {
        return Err(Error::Config(format!("at most {MAX_STEPS} steps, got {steps}")));
    }
    let (vocab, graph) = graph_for(text, window, mode)?;
    let q_tokens = tokenize(query, &Normalizer::default());
    let q_terms: Vec<String> = q_tokens.into_iter().filter(|t| !vocab.is_stopword(t)).collect();
    if q_terms.is_empty() {
        return Err(Error::EmptyQuery("demo".into()));
    }
    let labels = node_labels(&vocab, &graph);
    let mut h = Mat::zeros(labels.len(), q_terms.len());
    for (i, node) in labels.iter().enumerate() {
        for (j, q) in q_terms.iter().enumerate() {
            if node == q {
                h[(i, j)] = 1.0;
            }
        }
    }
    let mut states = vec![h.to_rows()];
    for _ in 0..steps {
        h = graph.norm_adjacency.matmul(&h);
        states.push(h.to_rows());
    }
    Ok(json!({
        "nodes": labels,
        "query": q_terms,
        "states": states,
    }))
}

/// Ranks one document per line (`id text...`) with BM25 or query likelihood.
pub fn rank_json(collection: &str, query: &str, scorer: &str) -> Result<Value> {
    let scorer = match scorer {
        "bm25" => Scorer::Bm25(Bm25Params::default()),
        "ql" => Scorer::QueryLikelihood { mu: DEFAULT_MU },
        other => return Err(Error::Config(format!("unknown scorer `{other}`"))),
    };
    let normalizer = Normalizer::default();
    let mut ids = Vec::new();
    let mut seen = BTreeSet::new();
    let mut token_lists = Vec::new();
    for line in collection.lines().filter(|l| !l.trim().is_empty()) {
        let (id, text) = line.trim().split_once(char::is_whitespace).unwrap_or((line.trim(), ""));
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateDocId(id.to_string()));
        }
        ids.push(id.to_string());
        token_lists.push(tokenize(text, &normalizer));
    }
    if ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = build_vocabulary(&token_lists, &default_stopwords(), 1, FreqMode::default())?;
    let docs: Vec<TokenizedDoc> = ids
        .iter()
        .zip(&token_lists)
        .map(|(id, toks)| TokenizedDoc::encode(id.clone(), toks, &vocab))
        .collect();
    let index = build_index(&docs)?;
    let q = Query::encode("demo", &tokenize(query, &normalizer), &vocab);
    if q.is_empty() {
        return Err(Error::EmptyQuery("demo".into()));
    }
    let ranked = index.rank(&q, scorer, docs.len());
    let rows: Vec<Value> = ranked
        .iter()
        .map(|d| json!({ "doc": d.doc_id, "score": d.score }))
        .collect();
    Ok(json!(rows))
}

fn to_js(r: Result<Value>) -> std::result::Result<String, String> {
    r.map(|v| v.to_string()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn graph_of_word(text: &str, window: usize) -> std::result::Result<String, String> {
    to_js(graph_of_word_json(text, window))
}

#[wasm_bindgen]
pub fn propagation(text: &str, query: &str, window: usize, mode: &str, steps: usize) -> std::result::Result<String, String> {
    to_js(propagation_json(text, query, window, mode, steps))
}

#[wasm_bindgen]
pub fn rank(collection: &str, query: &str, scorer: &str) -> std::result::Result<String, String> {
    to_js(rank_json(collection, query, scorer))
}
