//! End-to-end plumbing: persisted collections, candidate pools, prepared
//! model inputs and cross-validated train/re-rank runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocabulary, default_stopwords, tokenize, FreqMode, Normalizer, Query, RawDoc, RawQuery, TokenizedDoc,
    Vocabulary,
};
use crate::embed::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, kfold_split, ndcg_name, precision_name, EvalOptions, QRels, DEFAULT_CUTOFF};
use crate::graph::{build_document_graph, interaction_matrix, AdjacencyMode, DocumentGraph, DEFAULT_WINDOW};
use crate::model::{Hyper, ModelParams, PairInput};
use crate::retrieve::{build_index, PostingsIndex, RunList, ScoredDoc, Scorer};
use crate::rng::{self, Stream};
use crate::train::{
    rerank, train, CandidateInput, EpochRecord, QueryCandidates, ScoringSet, TrainConfig, TrainingSet, TripletSampler,
    Validation,
};

pub const DEFAULT_MIN_FREQ: u32 = 10;
pub const DEFAULT_FOLDS: usize = 5;

const VOCAB_FILE: &str = "vocab.json";
const DOCS_FILE: &str = "docs.jsonl";
const META_FILE: &str = "meta.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";

#[derive(Debug, Clone)]
pub struct IndexOptions {
    pub normalizer: String,
    pub stopwords: BTreeSet<String>,
    pub min_freq: u32,
    pub freq_mode: FreqMode,
}

impl Default for IndexOptions {
    fn default() -> Self {
        Self {
            normalizer: "none".into(),
            stopwords: default_stopwords(),
            min_freq: DEFAULT_MIN_FREQ,
            freq_mode: FreqMode::Corpus,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    normalizer: String,
    num_docs: usize,
}

/// Vocabulary, encoded documents and their inverted index.
#[derive(Debug)]
pub struct Collection {
    pub vocab: Vocabulary,
    pub docs: Vec<TokenizedDoc>,
    pub index: PostingsIndex,
    normalizer_name: String,
    normalizer: Normalizer,
}

impl Collection {
    pub fn build(raw: &[RawDoc], opts: &IndexOptions) -> Result<Self> {
        let normalizer = Normalizer::from_name(&opts.normalizer)?;
        let stopwords: BTreeSet<String> = opts
            .stopwords
            .iter()
            .flat_map(|s| tokenize(s, &normalizer))
            .collect();
        let tokens: Vec<Vec<String>> = raw.iter().map(|d| tokenize(&d.text, &normalizer)).collect();
        let vocab = build_vocabulary(&tokens, &stopwords, opts.min_freq, opts.freq_mode)?;
        let docs = raw
            .iter()
            .zip(&tokens)
            .map(|(d, t)| TokenizedDoc::encode(d.doc_id.clone(), t, &vocab))
            .collect();
        Self::from_parts(vocab, docs, &opts.normalizer)
    }

    pub fn from_parts(vocab: Vocabulary, docs: Vec<TokenizedDoc>, normalizer: &str) -> Result<Self> {
        let index = build_index(&docs)?;
        Ok(Self {
            vocab,
            docs,
            index,
            normalizer_name: normalizer.to_string(),
            normalizer: Normalizer::from_name(normalizer)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join(VOCAB_FILE), &self.vocab)?;
        write_json(
            &dir.join(META_FILE),
            &Meta {
                normalizer: self.normalizer_name.clone(),
                num_docs: self.docs.len(),
            },
        )?;
        let path = dir.join(DOCS_FILE);
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for d in &self.docs {
            let line = serde_json::to_string(d).expect("documents serialize");
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let vocab: Vocabulary =
            serde_json::from_str(&read(VOCAB_FILE)?).map_err(|e| Error::parse(VOCAB_FILE, e.line(), e.to_string()))?;
        let meta: Meta =
            serde_json::from_str(&read(META_FILE)?).map_err(|e| Error::parse(META_FILE, e.line(), e.to_string()))?;
        let text = read(DOCS_FILE)?;
        let mut docs = Vec::with_capacity(meta.num_docs);
        for (i, line) in text.lines().enumerate() {
            let d: TokenizedDoc = serde_json::from_str(line).map_err(|e| Error::parse(DOCS_FILE, i + 1, e.to_string()))?;
            if let Some(bad) = d.tokens.iter().find(|t| t.index() >= vocab.len()) {
                return Err(Error::parse(DOCS_FILE, i + 1, format!("term id {} outside vocabulary", bad.0)));
            }
            docs.push(d);
        }
        if docs.len() != meta.num_docs {
            return Err(Error::parse(
                DOCS_FILE,
                docs.len(),
                format!("expected {} documents, found {}", meta.num_docs, docs.len()),
            ));
        }
        Self::from_parts(vocab, docs, &meta.normalizer)
    }

    pub fn encode_query(&self, raw: &RawQuery) -> Query {
        Query::encode(raw.query_id.clone(), &tokenize(&raw.text, &self.normalizer), &self.vocab)
    }

    pub fn doc(&self, doc_id: &str) -> Option<&TokenizedDoc> {
        self.index.doc_index(doc_id).map(|i| &self.docs[i])
    }

    /// BM25 top-`depth` pool per query.
    pub fn candidates<'q>(&self, queries: impl IntoIterator<Item = &'q Query>, depth: usize) -> RunList {
        let mut run = RunList::new();
        for q in queries {
            run.insert_ranked(q.query_id.clone(), self.index.top_candidates(q, depth));
        }
        run
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string(value).expect("index files serialize");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Encodes queries, dropping the ones left without terms and warning once
/// per query that will be truncated by the model.
pub fn prepare_queries(collection: &Collection, raw: &[RawQuery], m_max: usize) -> Result<Vec<Query>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in raw {
        if !seen.insert(r.query_id.clone()) {
            return Err(Error::DuplicateQueryId(r.query_id.clone()));
        }
        let q = collection.encode_query(r);
        if q.is_empty() {
            warn!("query {} has no usable terms and is skipped", q.query_id);
            continue;
        }
        if q.len() > m_max {
            warn!("query {} has {} terms; only the first {m_max} are scored", q.query_id, q.len());
        }
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub window: usize,
    pub mode: AdjacencyMode,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            mode: AdjacencyMode::Graph,
        }
    }
}

pub fn pair_input(graph: &DocumentGraph, query: &Query, emb: &EmbeddingTable) -> PairInput {
    PairInput {
        adjacency: graph.norm_adjacency.clone(),
        interaction: interaction_matrix(graph, query, emb).values,
        idf: query.idf.clone(),
    }
}

/// Everything needed to train and re-rank over one query set.
pub struct Experiment<'a> {
    pub collection: &'a Collection,
    pub embeddings: &'a EmbeddingTable,
    pub queries: BTreeMap<String, Query>,
    pub qrels: &'a QRels,
    pub candidates: RunList,
}

/// Document graphs keyed by doc id for one feature configuration.
pub struct GraphStore {
    graphs: HashMap<String, DocumentGraph>,
}

impl<'a> Experiment<'a> {
    pub fn new(
        collection: &'a Collection,
        embeddings: &'a EmbeddingTable,
        queries: Vec<Query>,
        qrels: &'a QRels,
        depth: usize,
    ) -> Self {
        let candidates = collection.candidates(&queries, depth);
        Self {
            collection,
            embeddings,
            queries: queries.into_iter().map(|q| (q.query_id.clone(), q)).collect(),
            qrels,
            candidates,
        }
    }

    pub fn query_ids(&self) -> Vec<String> {
        self.queries.keys().cloned().collect()
    }

    /// Graphs for every candidate and every judged-relevant document.
    pub fn graphs(&self, features: FeatureConfig) -> Result<GraphStore> {
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        for (_, docs) in self.candidates.iter() {
            ids.extend(docs.iter().map(|d| d.doc_id.as_str()));
        }
        for qid in self.queries.keys() {
            if let Some(j) = self.qrels.judgments(qid) {
                ids.extend(j.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.as_str()));
            }
        }
        let mut graphs = HashMap::new();
        for id in ids {
            if let Some(doc) = self.collection.doc(id) {
                graphs.insert(id.to_string(), build_document_graph(&doc.tokens, features.window, features.mode)?);
            }
        }
        Ok(GraphStore { graphs })
    }

    fn input(&self, graphs: &GraphStore, query: &Query, doc_id: &str) -> Result<PairInput> {
        let g = graphs
            .graphs
            .get(doc_id)
            .ok_or_else(|| Error::UnknownDoc(doc_id.to_string()))?;
        Ok(pair_input(g, query, self.embeddings))
    }

    pub fn scoring_set(&self, query_ids: &[String], graphs: &GraphStore) -> Result<ScoringSet> {
        let mut set = ScoringSet::default();
        for qid in query_ids {
            let Some(q) = self.queries.get(qid) else { continue };
            let pool = self.candidates.get(qid).unwrap_or(&[]);
            let docs = pool
                .iter()
                .map(|d| {
                    Ok(CandidateInput {
                        doc_id: d.doc_id.clone(),
                        input: self.input(graphs, q, &d.doc_id)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            set.queries.push(QueryCandidates {
                query_id: qid.clone(),
                docs,
            });
        }
        Ok(set)
    }

    pub fn training_set(&self, query_ids: &[String], judged_only: bool, graphs: &GraphStore) -> Result<TrainingSet> {
        let mut pools = RunList::new();
        for qid in query_ids {
            if self.queries.contains_key(qid) {
                pools.insert_ranked(qid.clone(), self.candidates.get(qid).unwrap_or(&[]).to_vec());
            }
        }
        let sampler = TripletSampler::new(self.qrels, &pools, judged_only)?;
        let mut inputs: HashMap<String, HashMap<String, PairInput>> = HashMap::new();
        for (qid, doc) in sampler.documents() {
            let q = &self.queries[qid];
            let entry = inputs.entry(qid.to_string()).or_default();
            if !entry.contains_key(doc) {
                entry.insert(doc.to_string(), self.input(graphs, q, doc)?);
            }
        }
        TrainingSet::new(sampler, inputs)
    }
}

/// Model, features, training and fold settings for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub hyper: Hyper,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub judged_only: bool,
    pub folds: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hyper: Hyper::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            judged_only: false,
            folds: DEFAULT_FOLDS,
        }
    }
}

impl ModelConfig {
    pub fn initial_params(&self) -> ModelParams {
        ModelParams::init(self.hyper, &mut rng::stream(self.train.seed, Stream::Init))
    }
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
    pub params: ModelParams,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    /// Test-fold predictions of every evaluated fold.
    pub run: RunList,
    pub folds: Vec<FoldOutcome>,
}

/// Trains on each selected rotation and re-ranks its test fold. `only`
/// restricts the rotations; `None` runs all of them.
pub fn cross_validate(exp: &Experiment<'_>, config: &ModelConfig, only: Option<&[usize]>) -> Result<CvOutcome> {
    let split = kfold_split(&exp.query_ids(), config.folds, config.train.seed)?;
    let graphs = exp.graphs(config.features)?;
    let mut run = RunList::new();
    let mut folds = Vec::new();
    for fold in 0..split.len() {
        if only.is_some_and(|o| !o.contains(&fold)) {
            continue;
        }
        let rot = split.rotation(fold);
        info!(
            "fold {fold}: {} train, {} validation, {} test queries",
            rot.train.len(),
            rot.validation.len(),
            rot.test.len()
        );
        let data = exp.training_set(&rot.train, config.judged_only, &graphs)?;
        let val = exp.scoring_set(&rot.validation, &graphs)?;
        let test = exp.scoring_set(&rot.test, &graphs)?;
        let outcome = train(
            config.initial_params(),
            &data,
            Some(Validation {
                set: &val,
                qrels: exp.qrels,
            }),
            &config.train,
        )?;
        for (qid, docs) in rerank(&outcome.params, &test)?.iter() {
            run.insert_ranked(qid.to_string(), docs.to_vec());
        }
        folds.push(FoldOutcome {
            fold,
            best_epoch: outcome.best_epoch,
            log: outcome.log,
            params: outcome.params,
        });
    }
    Ok(CvOutcome { run, folds })
}

/// Re-scores each query's pool with first-stage scores replaced by the
/// model's.
pub fn rerank_with(exp: &Experiment<'_>, params: &ModelParams, features: FeatureConfig) -> Result<RunList> {
    let graphs = exp.graphs(features)?;
    rerank(params, &exp.scoring_set(&exp.query_ids(), &graphs)?)
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub mode: String,
    pub layers: usize,
    pub ndcg: f64,
    pub precision: f64,
    #[serde(skip)]
    pub run: RunList,
}

/// The graph-structure and depth grid: every adjacency mode at the default
/// depth, then graph mode at every depth in `depths`.
pub fn ablation_grid(base: &ModelConfig, depths: &[usize]) -> Vec<ModelConfig> {
    let mut out = Vec::new();
    for mode in AdjacencyMode::ALL {
        let mut c = *base;
        c.features.mode = mode;
        out.push(c);
    }
    for &t in depths {
        if t == base.hyper.layers {
            continue;
        }
        let mut c = *base;
        c.features.mode = AdjacencyMode::Graph;
        c.hyper.layers = t;
        out.push(c);
    }
    out
}

pub fn ablate(exp: &Experiment<'_>, configs: &[ModelConfig], only: Option<&[usize]>) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for cfg in configs {
        info!("ablation: mode {} t={}", cfg.features.mode.name(), cfg.hyper.layers);
        let cv = cross_validate(exp, cfg, only)?;
        let report = evaluate(&cv.run, exp.qrels, &[DEFAULT_CUTOFF], EvalOptions::default());
        rows.push(AblationRow {
            mode: cfg.features.mode.name().to_string(),
            layers: cfg.hyper.layers,
            ndcg: report.mean(&ndcg_name(DEFAULT_CUTOFF)),
            precision: report.mean(&precision_name(DEFAULT_CUTOFF)),
            run: cv.run,
        });
    }
    Ok(rows)
}

pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!(
        "{:<10} {:>3} {:>9} {:>9}\n",
        "mode",
        "t",
        ndcg_name(DEFAULT_CUTOFF),
        precision_name(DEFAULT_CUTOFF)
    );
    for r in rows {
        out.push_str(&format!("{:<10} {:>3} {:>9.4} {:>9.4}\n", r.mode, r.layers, r.ndcg, r.precision));
    }
    out
}

/// Re-scores each query's pool with a first-stage scorer.
pub fn baseline_run(exp: &Experiment<'_>, scorer: Scorer) -> Result<RunList> {
    let mut run = RunList::new();
    for (qid, pool) in exp.candidates.iter() {
        let q = &exp.queries[qid];
        let mut scored = Vec::with_capacity(pool.len());
        for d in pool {
            let score = match scorer {
                Scorer::Bm25(p) => exp.collection.index.bm25_score(q, &d.doc_id, p)?,
                Scorer::QueryLikelihood { mu } => exp.collection.index.ql_score(q, &d.doc_id, mu)?,
            };
            scored.push(ScoredDoc {
                doc_id: d.doc_id.clone(),
                score,
            });
        }
        run.insert(qid.to_string(), scored);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_queries_tsv;

    fn raw(docs: &[(&str, &str)]) -> Vec<RawDoc> {
        docs.iter()
            .map(|(id, t)| RawDoc {
                doc_id: id.to_string(),
                text: t.to_string(),
            })
            .collect()
    }

    fn opts() -> IndexOptions {
        IndexOptions {
            min_freq: 1,
            ..Default::default()
        }
    }

    #[test]
    fn save_load_round_trip() {
        let docs = raw(&[("d1", "The cat sat on the mat."), ("d2", "Dogs chase cats"), ("d3", "")]);
        let c = Collection::build(&docs, &opts()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        c.save(dir.path()).unwrap();
        let back = Collection::load(dir.path()).unwrap();
        assert_eq!(back.vocab, c.vocab);
        assert_eq!(back.docs, c.docs);
        let again = tempfile::tempdir().unwrap();
        back.save(again.path()).unwrap();
        for f in [VOCAB_FILE, DOCS_FILE, META_FILE] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(again.path().join(f)).unwrap()
            );
        }
        assert!(c.vocab.id("the").is_none());
        assert_eq!(c.doc("d3").unwrap().tokens.len(), 0);
    }

    #[test]
    fn empty_queries_dropped() {
        let c = Collection::build(&raw(&[("d1", "alpha beta")]), &opts()).unwrap();
        let qs = parse_queries_tsv("q1\tthe of\nq2\talpha gamma\n".as_bytes(), "q").unwrap();
        let prepared = prepare_queries(&c, &qs, 8).unwrap();
        assert_eq!(prepared.len(), 1);
        assert_eq!(prepared[0].len(), 2);
        let dup = parse_queries_tsv("q\ta\nq\tb\n".as_bytes(), "q").unwrap();
        assert!(prepare_queries(&c, &dup, 8).is_err());
    }

    #[test]
    fn grid_contents() {
        let grid = ablation_grid(&ModelConfig::default(), &[0, 1, 2, 3, 4]);
        let keys: Vec<(AdjacencyMode, usize)> = grid.iter().map(|c| (c.features.mode, c.hyper.layers)).collect();
        assert_eq!(
            keys,
            vec![
                (AdjacencyMode::Graph, 2),
                (AdjacencyMode::Sequence, 2),
                (AdjacencyMode::Zero, 2),
                (AdjacencyMode::Graph, 0),
                (AdjacencyMode::Graph, 1),
                (AdjacencyMode::Graph, 3),
                (AdjacencyMode::Graph, 4),
            ]
        );
    }
}
