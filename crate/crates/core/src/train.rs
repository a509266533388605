//! Pairwise hinge-loss training with Adam.

use std::collections::HashMap;
use std::io::Write;

use log::{info, warn};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{mean_ndcg, QRels, DEFAULT_CUTOFF};
use crate::model::{accumulate_gradient, forward, ForwardTrace, ModelParams, PairInput};
use crate::retrieve::{RunList, ScoredDoc};
use crate::rng::{self, Stream};

/// `max(0, 1 - rel_pos + rel_neg)`
pub fn hinge_loss(rel_pos: f64, rel_neg: f64) -> f64 {
    (1.0 - rel_pos + rel_neg).max(0.0)
}

/// Loss gradient for one triplet, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub grads: ModelParams,
    pub loss: f64,
}

fn check_trace(params: &ModelParams, trace: &ForwardTrace<'_>) -> Result<()> {
    let h = params.hyper;
    if trace.states.len() != h.layers + 1 || trace.mask.len() != h.m_max || trace.final_state().cols() != h.m_max {
        return Err(Error::Shape("forward trace does not match the model hyperparameters".into()));
    }
    Ok(())
}

/// Exact gradient of the hinge loss with respect to every parameter. A
/// satisfied margin yields an all-zero tape.
pub fn backward(pos: &ForwardTrace<'_>, neg: &ForwardTrace<'_>, params: &ModelParams) -> Result<GradientTape> {
    check_trace(params, pos)?;
    check_trace(params, neg)?;
    let loss = hinge_loss(pos.rel, neg.rel);
    let mut grads = params.zeros_like();
    if loss > 0.0 {
        accumulate_gradient(params, pos, -1.0, &mut grads);
        accumulate_gradient(params, neg, 1.0, &mut grads);
    }
    Ok(GradientTape { grads, loss })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified when any gradient
/// entry is non-finite.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState) -> Result<()> {
    for (name, g) in grads.tensors() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let mut m_all = state.first_moment.tensors_mut();
    let mut v_all = state.second_moment.tensors_mut();
    for (((_, p), (_, g)), ((_, m), (_, v))) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(m_all.iter_mut().zip(v_all.iter_mut()))
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triplet {
    pub query_id: String,
    pub positive: String,
    pub negative: String,
}

#[derive(Debug, Clone, PartialEq)]
struct QueryPool {
    query_id: String,
    positives: Vec<String>,
    negatives: Vec<String>,
}

/// Uniform (query, positive, negative) sampling from each query's candidate
/// pool.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletSampler {
    pools: Vec<QueryPool>,
    excluded: Vec<String>,
}

impl TripletSampler {
    /// Positives are judged-relevant pool members, or every judged-relevant
    /// document when none made it into the pool. Negatives are pool members
    /// judged non-relevant, plus unjudged ones unless `judged_only`.
    pub fn new(qrels: &QRels, candidates: &RunList, judged_only: bool) -> Result<Self> {
        let mut pools = Vec::new();
        let mut excluded = Vec::new();
        for (qid, docs) in candidates.iter() {
            let grade = |d: &ScoredDoc| qrels.grade(qid, &d.doc_id);
            let mut positives: Vec<String> = docs
                .iter()
                .filter(|d| grade(d).is_some_and(|g| g > 0))
                .map(|d| d.doc_id.clone())
                .collect();
            if positives.is_empty() {
                if let Some(j) = qrels.judgments(qid) {
                    positives = j.iter().filter(|(_, &g)| g > 0).map(|(d, _)| d.clone()).collect();
                }
            }
            let negatives: Vec<String> = docs
                .iter()
                .filter(|d| match grade(d) {
                    Some(g) => g == 0,
                    None => !judged_only,
                })
                .map(|d| d.doc_id.clone())
                .collect();
            if positives.is_empty() || negatives.is_empty() {
                info!(
                    "query {qid} excluded from training: {} positives, {} negatives",
                    positives.len(),
                    negatives.len()
                );
                excluded.push(qid.to_string());
                continue;
            }
            pools.push(QueryPool {
                query_id: qid.to_string(),
                positives,
                negatives,
            });
        }
        if pools.is_empty() {
            return Err(Error::NoUsableQueries);
        }
        Ok(Self { pools, excluded })
    }

    pub fn excluded(&self) -> &[String] {
        &self.excluded
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.pools.iter().map(|p| p.query_id.as_str())
    }

    /// Every (query, doc) pair the sampler can emit.
    pub fn documents(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pools.iter().flat_map(|p| {
            p.positives
                .iter()
                .chain(&p.negatives)
                .map(move |d| (p.query_id.as_str(), d.as_str()))
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Triplet {
        let pool = &self.pools[rng.random_range(0..self.pools.len())];
        let positive = &pool.positives[rng.random_range(0..pool.positives.len())];
        let negative = &pool.negatives[rng.random_range(0..pool.negatives.len())];
        Triplet {
            query_id: pool.query_id.clone(),
            positive: positive.clone(),
            negative: negative.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateInput {
    pub doc_id: String,
    pub input: PairInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryCandidates {
    pub query_id: String,
    pub docs: Vec<CandidateInput>,
}

/// Prepared inputs for re-ranking a set of queries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoringSet {
    pub queries: Vec<QueryCandidates>,
}

/// Scores every candidate and sorts by the run tie rule.
pub fn rerank(params: &ModelParams, set: &ScoringSet) -> Result<RunList> {
    let mut run = RunList::new();
    for q in &set.queries {
        let mut scored = Vec::with_capacity(q.docs.len());
        for c in &q.docs {
            let rel = forward(params, &c.input)?.rel;
            if !rel.is_finite() {
                return Err(Error::NonFinite(format!("score of {} for {}", c.doc_id, q.query_id)));
            }
            scored.push(ScoredDoc {
                doc_id: c.doc_id.clone(),
                score: rel,
            });
        }
        run.insert(q.query_id.clone(), scored);
    }
    Ok(run)
}

/// Triplet sampler plus the prepared input of every document it can emit.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub sampler: TripletSampler,
    inputs: HashMap<String, HashMap<String, PairInput>>,
}

impl TrainingSet {
    pub fn new(sampler: TripletSampler, inputs: HashMap<String, HashMap<String, PairInput>>) -> Result<Self> {
        for (q, d) in sampler.documents() {
            if inputs.get(q).and_then(|m| m.get(d)).is_none() {
                return Err(Error::UnknownDoc(format!("{d} (query {q})")));
            }
        }
        Ok(Self { sampler, inputs })
    }

    fn input(&self, query_id: &str, doc_id: &str) -> &PairInput {
        &self.inputs[query_id][doc_id]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            steps_per_epoch: 32,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub pair_acc: f64,
    pub val_ndcg20: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best parameters by validation nDCG@20, or the final ones without a
    /// validation set.
    pub params: ModelParams,
    pub final_params: ModelParams,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// One JSON object per epoch.
    pub fn write_log(&self, mut w: impl Write) -> std::io::Result<()> {
        for rec in &self.log {
            writeln!(w, "{}", serde_json::to_string(rec).expect("records serialize"))?;
        }
        Ok(())
    }
}

/// Validation queries and their judgments for checkpoint selection.
pub struct Validation<'a> {
    pub set: &'a ScoringSet,
    pub qrels: &'a QRels,
}

pub fn train(init: ModelParams, data: &TrainingSet, validation: Option<Validation<'_>>, config: &TrainConfig) -> Result<TrainOutcome> {
    init.check_shapes()?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut rng = rng::stream(config.seed, Stream::Sampling);
    let mut params = init;
    let mut adam = AdamState::new(&params, config.adam);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let scale = 1.0 / config.batch_size as f64;

    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        for _ in 0..config.steps_per_epoch {
            let mut grads = params.zeros_like();
            for _ in 0..config.batch_size {
                let t = data.sampler.sample(&mut rng);
                let pos = forward(&params, data.input(&t.query_id, &t.positive))?;
                let neg = forward(&params, data.input(&t.query_id, &t.negative))?;
                let loss = hinge_loss(pos.rel, neg.rel);
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("loss at epoch {epoch}")));
                }
                loss_sum += loss;
                seen += 1;
                if pos.rel > neg.rel {
                    correct += 1;
                }
                if loss > 0.0 {
                    accumulate_gradient(&params, &pos, -scale, &mut grads);
                    accumulate_gradient(&params, &neg, scale, &mut grads);
                }
            }
            adam_step(&mut params, &grads, &mut adam)?;
        }
        if let Err(name) = params.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let val_ndcg20 = match &validation {
            Some(v) => Some(mean_ndcg(&rerank(&params, v.set)?, v.qrels, DEFAULT_CUTOFF)),
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            mean_loss: if seen > 0 { loss_sum / seen as f64 } else { 0.0 },
            pair_acc: if seen > 0 { correct as f64 / seen as f64 } else { 0.0 },
            val_ndcg20,
        };
        info!(
            "epoch {epoch}: loss {:.4} pair_acc {:.3}{}",
            rec.mean_loss,
            rec.pair_acc,
            val_ndcg20.map_or(String::new(), |v| format!(" val_ndcg@20 {v:.4}"))
        );
        if let Some(v) = val_ndcg20 {
            if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                best = Some((v, epoch, params.clone()));
            }
        }
        log.push(rec);
    }

    if validation.is_some() && best.is_none() && config.epochs > 0 {
        warn!("no validation score recorded; keeping final parameters");
    }
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (config.epochs, params.clone()),
    };
    Ok(TrainOutcome {
        params: best_params,
        final_params: params,
        best_epoch,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NormAdjacency;
    use crate::model::Hyper;
    use crate::tensor::Mat;

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge_loss(2.0, 0.5), 0.0);
        assert_eq!(hinge_loss(0.3, 0.3), 1.0);
        assert_eq!(hinge_loss(0.0, 0.5), 1.5);
    }

    fn tiny_params() -> ModelParams {
        let mut rng = rng::stream(1, Stream::Init);
        ModelParams::init(
            Hyper {
                layers: 1,
                k: 2,
                m_max: 2,
                shared_weights: true,
            },
            &mut rng,
        )
    }

    fn input(values: &[f64]) -> PairInput {
        PairInput {
            adjacency: NormAdjacency::empty(values.len()),
            interaction: Mat::from_vec(values.len(), 1, values.to_vec()),
            idf: vec![1.0],
        }
    }

    #[test]
    fn satisfied_margin_gives_zero_gradient() {
        let mut p = tiny_params();
        p.w_x = vec![50.0, 50.0];
        let a = input(&[0.9, 0.8]);
        let b = input(&[-0.9, -0.8]);
        let pos = forward(&p, &a).unwrap();
        p.w_x = vec![50.0, 50.0];
        let neg = forward(&p, &b).unwrap();
        assert!(pos.rel - neg.rel >= 1.0);
        let tape = backward(&pos, &neg, &p).unwrap();
        assert_eq!(tape.loss, 0.0);
        assert!(tape.grads.tensors().iter().all(|(_, t)| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_rejects_mismatched_params() {
        let p = tiny_params();
        let a = input(&[0.5]);
        let pos = forward(&p, &a).unwrap();
        let other = ModelParams::zeros(Hyper {
            layers: 2,
            k: 2,
            m_max: 2,
            shared_weights: true,
        });
        assert!(backward(&pos, &pos, &other).is_err());
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.w_x = vec![3.0, -1e-3];
        g.c = 42.0;
        let mut state = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut state).unwrap();
        assert!((before.w_x[0] - p.w_x[0] - 0.001).abs() < 1e-9);
        assert!((p.w_x[1] - before.w_x[1] - 0.001).abs() < 1e-8);
        assert!((before.c - p.c - 0.001).abs() < 1e-9);
        assert_eq!(p.layers, before.layers);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = tiny_params();
        let before = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut state).unwrap();
        adam_step(&mut p, &g, &mut state).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step, 2);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = tiny_params();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.w_x[0] = 1.0;
        g.layers[0].u_h[(1, 0)] = f64::NAN;
        let mut state = AdamState::new(&p, AdamConfig::default());
        let err = adam_step(&mut p, &g, &mut state).unwrap_err();
        assert!(err.to_string().contains("layer0.u_h"), "{err}");
        assert_eq!(p, before);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut p = tiny_params();
            let mut state = AdamState::new(&p, AdamConfig::default());
            let mut rng = rng::stream(5, Stream::Sampling);
            for _ in 0..100 {
                let mut g = p.zeros_like();
                for (_, t) in g.tensors_mut() {
                    for v in t.iter_mut() {
                        *v = rng.random_range(-1.0..1.0);
                    }
                }
                adam_step(&mut p, &g, &mut state).unwrap();
            }
            crate::checkpoint::checkpoint_bytes(&p)
        };
        assert_eq!(run(), run());
    }

    fn qrels_and_pool() -> (QRels, RunList) {
        let mut qrels = QRels::new();
        qrels.insert("q1", "p1", 1);
        qrels.insert("q1", "p2", 2);
        qrels.insert("q1", "n1", 0);
        qrels.insert("q2", "p1", 1);
        qrels.insert("q3", "far", 1);
        let mut run = RunList::new();
        let docs = |ids: &[&str]| {
            ids.iter()
                .map(|d| ScoredDoc {
                    doc_id: d.to_string(),
                    score: 1.0,
                })
                .collect::<Vec<_>>()
        };
        run.insert("q1", docs(&["p1", "p2", "n1", "u1", "u2"]));
        run.insert("q2", docs(&["p1"]));
        run.insert("q3", docs(&["x1", "x2"]));
        (qrels, run)
    }

    #[test]
    fn sampler_reaches_every_triplet() {
        let (qrels, run) = qrels_and_pool();
        let s = TripletSampler::new(&qrels, &run, false).unwrap();
        assert_eq!(s.excluded(), &["q2".to_string()]);
        let mut rng = rng::stream(0, Stream::Sampling);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..2000 {
            let t = s.sample(&mut rng);
            if t.query_id == "q1" {
                seen.insert(t);
            } else {
                assert_eq!(t.positive, "far");
            }
        }
        // 2 positives x 3 negatives
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn judged_only_negatives() {
        let (qrels, run) = qrels_and_pool();
        let s = TripletSampler::new(&qrels, &run, true).unwrap();
        let mut rng = rng::stream(0, Stream::Sampling);
        for _ in 0..200 {
            assert_eq!(s.sample(&mut rng).negative, "n1");
        }
    }

    #[test]
    fn no_usable_queries() {
        let qrels = QRels::new();
        let mut run = RunList::new();
        run.insert("q", vec![]);
        assert!(matches!(TripletSampler::new(&qrels, &run, false), Err(Error::NoUsableQueries)));
    }
}
