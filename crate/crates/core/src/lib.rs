//! Graph-of-word relevance matching for ad-hoc retrieval.
//!
//! Documents are turned into word co-occurrence graphs whose node features
//! are cosine similarities to the query terms. Gated message passing spreads
//! those matching signals along the graph, a per-term k-max readout picks the
//! strongest signals and an idf-gated scorer turns them into a relevance
//! score used to re-rank BM25 candidates.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod retrieve;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, ErrorKind, Result};
