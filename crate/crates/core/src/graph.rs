//! Graph-of-word construction and the node/query interaction matrix.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, TermId, Vocabulary};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::tensor::Mat;

pub const DEFAULT_WINDOW: usize = 5;

/// Which topology is handed to the propagation layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjacencyMode {
    /// Unique-word nodes linked by windowed co-occurrence counts.
    #[default]
    Graph,
    /// One node per token position, linked to the previous and next token.
    Sequence,
    /// Unique-word nodes with no edges at all.
    Zero,
}

impl AdjacencyMode {
    pub const ALL: [AdjacencyMode; 3] = [AdjacencyMode::Graph, AdjacencyMode::Sequence, AdjacencyMode::Zero];

    pub fn name(self) -> &'static str {
        match self {
            AdjacencyMode::Graph => "graph",
            AdjacencyMode::Sequence => "sequence",
            AdjacencyMode::Zero => "zero",
        }
    }
}

impl std::str::FromStr for AdjacencyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph" => Ok(AdjacencyMode::Graph),
            "sequence" => Ok(AdjacencyMode::Sequence),
            "zero" => Ok(AdjacencyMode::Zero),
            other => Err(Error::Config(format!("unknown adjacency mode `{other}`"))),
        }
    }
}

/// Symmetric normalized adjacency `D^-1/2 A D^-1/2`, stored as per-row
/// neighbour lists. Zero-degree nodes have empty rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NormAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormAdjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            rows: vec![Vec::new(); n],
        }
    }

    /// Normalizes an undirected weighted edge list (`i < j`, one entry per pair).
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut degree = vec![0.0; n];
        for &(i, j, w) in edges {
            degree[i] += w;
            degree[j] += w;
        }
        let mut rows = vec![Vec::new(); n];
        for &(i, j, w) in edges {
            if w == 0.0 {
                continue;
            }
            let v = w / (degree[i] * degree[j]).sqrt();
            rows[i].push((j, v));
            rows[j].push((i, v));
        }
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
        }
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        let mut dense = vec![vec![0.0; n]; n];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                dense[i][j] = v;
            }
        }
        dense
    }

    /// `out = self * h`
    pub fn matmul(&self, h: &Mat) -> Mat {
        let mut out = Mat::zeros(h.rows(), h.cols());
        self.matmul_acc(h, &mut out);
        out
    }

    /// `out += self * h` (the matrix is symmetric, so this is also the
    /// transpose product used by the backward pass).
    pub fn matmul_acc(&self, h: &Mat, out: &mut Mat) {
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                let (src, dst) = (h.row(j), i);
                for (o, s) in out.row_mut(dst).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
    }

    /// Reorders nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut rows: Vec<Vec<(usize, f64)>> = perm
            .iter()
            .map(|&old| self.rows[old].iter().map(|&(j, v)| (inverse[j], v)).collect())
            .collect();
        for row in &mut rows {
            row.sort_by_key(|&(j, _)| j);
        }
        Self { rows }
    }
}

/// Normalizes a dense co-occurrence matrix. The input must be square,
/// symmetric, non-negative and have a zero diagonal.
pub fn normalize_adjacency(a: &[Vec<f64>]) -> Result<NormAdjacency> {
    let n = a.len();
    let mut edges = Vec::new();
    for (i, row) in a.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidAdjacency(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        if row[i] != 0.0 {
            return Err(Error::InvalidAdjacency(format!("non-zero diagonal at {i}")));
        }
        for j in 0..n {
            if !(row[j] >= 0.0) || !row[j].is_finite() {
                return Err(Error::InvalidAdjacency(format!("bad entry at ({i},{j})")));
            }
            if row[j] != a[j][i] {
                return Err(Error::InvalidAdjacency(format!("asymmetric at ({i},{j})")));
            }
            if j > i && row[j] > 0.0 {
                edges.push((i, j, row[j]));
            }
        }
    }
    Ok(NormAdjacency::from_edges(n, &edges))
}

/// A document's nodes and their topology.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentGraph {
    /// Token id of each node. For graph and zero modes these are unique and in
    /// first-occurrence order; in sequence mode there is one node per position.
    pub node_terms: Vec<TermId>,
    /// Undirected edges `(i, j, count)` with `i < j`, sorted.
    pub edges: Vec<(usize, usize, u32)>,
    pub norm_adjacency: NormAdjacency,
}

impl DocumentGraph {
    fn from_counts(node_terms: Vec<TermId>, mut edges: Vec<(usize, usize, u32)>) -> Self {
        edges.sort_unstable();
        let weighted: Vec<(usize, usize, f64)> = edges.iter().map(|&(i, j, c)| (i, j, c as f64)).collect();
        let norm_adjacency = NormAdjacency::from_edges(node_terms.len(), &weighted);
        Self {
            node_terms,
            edges,
            norm_adjacency,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_terms.len()
    }

    pub fn adjacency_dense(&self) -> Vec<Vec<u32>> {
        let n = self.num_nodes();
        let mut a = vec![vec![0; n]; n];
        for &(i, j, c) in &self.edges {
            a[i][j] = c;
            a[j][i] = c;
        }
        a
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        let key = (i.min(j), i.max(j));
        self.edges
            .binary_search_by_key(&key, |&(a, b, _)| (a, b))
            .map_or(0, |k| self.edges[k].2)
    }

    /// Writes `term_i term_j count` lines.
    pub fn write_edge_list(&self, vocab: &Vocabulary, mut w: impl Write) -> std::io::Result<()> {
        for &(i, j, c) in &self.edges {
            writeln!(
                w,
                "{} {} {}",
                vocab.term(self.node_terms[i]),
                vocab.term(self.node_terms[j]),
                c
            )?;
        }
        Ok(())
    }
}

fn unique_nodes(tokens: &[TermId]) -> (Vec<TermId>, Vec<usize>) {
    let mut node_of: HashMap<TermId, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let positions = tokens
        .iter()
        .map(|&t| {
            *node_of.entry(t).or_insert_with(|| {
                nodes.push(t);
                nodes.len() - 1
            })
        })
        .collect();
    (nodes, positions)
}

/// Builds the graph-of-word: every stride-1 window of `window` tokens adds 1
/// to each unordered pair of distinct terms it contains. A document shorter
/// than the window forms a single window.
pub fn build_graph(tokens: &[TermId], window: usize) -> Result<DocumentGraph> {
    if window < 2 {
        return Err(Error::Config(format!("window must be at least 2, got {window}")));
    }
    let (nodes, pos) = unique_nodes(tokens);
    let mut counts: HashMap<(usize, usize), u32> = HashMap::new();
    let starts = tokens.len().saturating_sub(window) + 1;
    let mut seen: Vec<usize> = Vec::with_capacity(window);
    for s in 0..starts.min(tokens.len()) {
        seen.clear();
        for &p in &pos[s..(s + window).min(tokens.len())] {
            if !seen.contains(&p) {
                seen.push(p);
            }
        }
        for a in 0..seen.len() {
            for b in a + 1..seen.len() {
                let key = (seen[a].min(seen[b]), seen[a].max(seen[b]));
                *counts.entry(key).or_default() += 1;
            }
        }
    }
    let edges = counts.into_iter().map(|((i, j), c)| (i, j, c)).collect();
    Ok(DocumentGraph::from_counts(nodes, edges))
}

/// One node per token position, each linked to its neighbours in the text.
pub fn sequence_graph(tokens: &[TermId]) -> DocumentGraph {
    let edges = (1..tokens.len()).map(|i| (i - 1, i, 1)).collect();
    DocumentGraph::from_counts(tokens.to_vec(), edges)
}

/// Unique-word nodes without edges.
pub fn zero_graph(tokens: &[TermId]) -> DocumentGraph {
    let (nodes, _) = unique_nodes(tokens);
    DocumentGraph::from_counts(nodes, Vec::new())
}

pub fn build_document_graph(tokens: &[TermId], window: usize, mode: AdjacencyMode) -> Result<DocumentGraph> {
    match mode {
        AdjacencyMode::Graph => build_graph(tokens, window),
        AdjacencyMode::Sequence => Ok(sequence_graph(tokens)),
        AdjacencyMode::Zero => Ok(zero_graph(tokens)),
    }
}

/// `n x M` cosine similarities between document nodes and query terms.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub values: Mat,
    pub node_terms: Vec<TermId>,
    pub query_terms: Vec<Option<TermId>>,
}

pub fn interaction_matrix(graph: &DocumentGraph, query: &Query, emb: &EmbeddingTable) -> InteractionMatrix {
    let query_terms: Vec<Option<TermId>> = query.ids().collect();
    let mut values = Mat::zeros(graph.num_nodes(), query_terms.len());
    for (i, &node) in graph.node_terms.iter().enumerate() {
        for (j, &q) in query_terms.iter().enumerate() {
            values[(i, j)] = emb.similarity(Some(node), q);
        }
    }
    InteractionMatrix {
        values,
        node_terms: graph.node_terms.clone(),
        query_terms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QueryTerm;

    fn ids(v: &[u32]) -> Vec<TermId> {
        v.iter().map(|&t| TermId(t)).collect()
    }

    // a=0, b=1, c=2
    #[test]
    fn window_two_counts() {
        let g = build_graph(&ids(&[0, 1, 0, 2]), 2).unwrap();
        assert_eq!(g.node_terms, ids(&[0, 1, 2]));
        assert_eq!(g.count(0, 1), 2);
        assert_eq!(g.count(0, 2), 1);
        assert_eq!(g.count(1, 2), 0);
    }

    #[test]
    fn window_three_counts() {
        let g = build_graph(&ids(&[0, 1, 0, 2]), 3).unwrap();
        assert_eq!(g.count(0, 1), 2);
        assert_eq!(g.count(0, 2), 1);
        assert_eq!(g.count(1, 2), 1);
    }

    #[test]
    fn short_document_forms_one_window() {
        let g = build_graph(&ids(&[4, 5, 6]), 5).unwrap();
        assert_eq!(g.count(0, 1), 1);
        assert_eq!(g.count(0, 2), 1);
        assert_eq!(g.count(1, 2), 1);
        let single = build_graph(&ids(&[4]), 5).unwrap();
        assert_eq!(single.num_nodes(), 1);
        assert!(single.edges.is_empty());
    }

    #[test]
    fn distinct_tokens_give_chain() {
        let toks = ids(&[9, 8, 7, 6, 5]);
        let g = build_graph(&toks, 2).unwrap();
        assert_eq!(g.edges, sequence_graph(&toks).edges);
    }

    #[test]
    fn empty_document() {
        let g = build_graph(&[], 5).unwrap();
        assert_eq!(g.num_nodes(), 0);
        assert!(build_graph(&ids(&[1]), 1).is_err());
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_adjacency(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(n.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let n = normalize_adjacency(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(n.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let n = normalize_adjacency(&[
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(n.to_dense()[2], vec![0.0; 3]);
        assert!(normalize_adjacency(&[vec![0.0, 1.0], vec![2.0, 0.0]]).is_err());
        assert!(normalize_adjacency(&[vec![1.0]]).is_err());
    }

    #[test]
    fn sparse_and_dense_normalization_agree() {
        let g = build_graph(&ids(&[0, 1, 2, 0, 3, 1, 1, 4]), 3).unwrap();
        let dense: Vec<Vec<f64>> = g
            .adjacency_dense()
            .iter()
            .map(|r| r.iter().map(|&c| c as f64).collect())
            .collect();
        assert_eq!(normalize_adjacency(&dense).unwrap(), g.norm_adjacency);
    }

    #[test]
    fn modes() {
        let toks = ids(&[0, 1, 0]);
        let s = build_document_graph(&toks, 5, AdjacencyMode::Sequence).unwrap();
        assert_eq!(s.node_terms, toks);
        assert_eq!(s.edges, vec![(0, 1, 1), (1, 2, 1)]);
        let z = build_document_graph(&toks, 5, AdjacencyMode::Zero).unwrap();
        assert_eq!(z.num_nodes(), 2);
        assert_eq!(z.norm_adjacency.nnz(), 0);
    }

    #[test]
    fn interaction_examples() {
        let mut emb = EmbeddingTable::empty(3, 2);
        emb.set(TermId(0), &[1.0, 0.0]).unwrap();
        emb.set(TermId(1), &[1.0, 1.0]).unwrap();
        let g = build_graph(&ids(&[0, 1, 2]), 2).unwrap();
        let q = Query {
            query_id: "q".into(),
            terms: vec![
                QueryTerm { surface: "a".into(), id: Some(TermId(0)) },
                QueryTerm { surface: "c".into(), id: Some(TermId(2)) },
            ],
            idf: vec![1.0, 1.0],
        };
        let s = interaction_matrix(&g, &q, &emb);
        assert_eq!(s.values[(0, 0)], 1.0);
        assert!((s.values[(1, 0)] - 0.5f64.sqrt()).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(s.values[(i, 1)], 0.0);
        }
        let empty = interaction_matrix(&build_graph(&[], 2).unwrap(), &q, &emb);
        assert_eq!((empty.values.rows(), empty.values.cols()), (0, 2));
    }

    #[test]
    fn edge_list_dump() {
        use crate::corpus::{build_vocabulary, FreqMode};
        let doc: Vec<String> = ["x", "y", "x"].iter().map(|s| s.to_string()).collect();
        let v = build_vocabulary([doc.clone()], &Default::default(), 1, FreqMode::Corpus).unwrap();
        let g = build_graph(&v.encode(&doc), 2).unwrap();
        let mut out = Vec::new();
        g.write_edge_list(&v, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x y 2\n");
    }
}
