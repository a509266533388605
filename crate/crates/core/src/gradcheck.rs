//! Finite-difference verification of the analytic gradients.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::NormAdjacency;
use crate::model::{forward, ForwardTrace, Hyper, ModelParams, PairInput};
use crate::rng::{self, Stream};
use crate::tensor::Mat;
use crate::train::{backward, hinge_loss};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;

/// Shape of a random check instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceSpec {
    pub nodes: usize,
    pub query_terms: usize,
    pub layers: usize,
    pub k: usize,
    pub m_max: usize,
    pub shared_weights: bool,
    /// Probability that a node pair is connected.
    pub edge_prob: f64,
    /// Start from duplicated node signals so the readout sees exact ties,
    /// then jitter them apart.
    pub ties: bool,
}

impl InstanceSpec {
    pub fn new(nodes: usize, query_terms: usize, layers: usize, k: usize) -> Self {
        Self {
            nodes,
            query_terms,
            layers,
            k,
            m_max: query_terms.max(4) + 1,
            shared_weights: true,
            edge_prob: 0.35,
            ties: false,
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            layers: self.layers,
            k: self.k,
            m_max: self.m_max,
            shared_weights: self.shared_weights,
        }
    }
}

/// Parameters plus a positive/negative pair with positive hinge loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub params: ModelParams,
    pub positive: PairInput,
    pub negative: PairInput,
}

impl Instance {
    pub fn loss(&self, params: &ModelParams) -> Result<f64> {
        let pos = forward(params, &self.positive)?;
        let neg = forward(params, &self.negative)?;
        Ok(hinge_loss(pos.rel, neg.rel))
    }

    pub fn analytic_gradient(&self) -> Result<ModelParams> {
        let pos = forward(&self.params, &self.positive)?;
        let neg = forward(&self.params, &self.negative)?;
        Ok(backward(&pos, &neg, &self.params)?.grads)
    }
}

fn random_pair(spec: &InstanceSpec, rng: &mut impl Rng) -> PairInput {
    let n = spec.nodes;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(spec.edge_prob) {
                edges.push((i, j, rng.random_range(1..4) as f64));
            }
        }
    }
    let adjacency = NormAdjacency::from_edges(n, &edges);
    let mut s = Mat::zeros(n, spec.query_terms);
    for v in s.as_mut_slice() {
        *v = rng.random_range(-1.0..1.0);
    }
    if spec.ties && n > 1 {
        for i in (1..n).step_by(2) {
            let prev = s.row(i - 1).to_vec();
            s.row_mut(i).copy_from_slice(&prev);
        }
    }
    PairInput {
        adjacency,
        interaction: s,
        idf: Vec::new(),
    }
}

fn jitter(input: &mut PairInput, rng: &mut impl Rng) {
    for v in input.interaction.as_mut_slice() {
        *v += rng.random_range(-0.05..0.05);
    }
}

/// Smallest gap between consecutive values among the top `k + 1` entries of
/// each real column of the final state. Central differences are only valid
/// when no perturbation can reorder the readout.
fn selection_gap(trace: &ForwardTrace<'_>, k: usize) -> f64 {
    let h = trace.final_state();
    let mut gap = f64::INFINITY;
    for (j, &real) in trace.mask.iter().enumerate() {
        if !real {
            continue;
        }
        let mut col: Vec<f64> = h.column(j).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        col.truncate(k + 1);
        for w in col.windows(2) {
            gap = gap.min(w[0] - w[1]);
        }
    }
    gap
}

const MIN_GAP: f64 = 1e-3;
const MIN_LOSS: f64 = 1e-3;

/// Draws parameters and a document pair away from every kink of the loss:
/// readout orderings are separated, and the hinge is active.
pub fn random_instance(spec: &InstanceSpec, seed: u64) -> Result<Instance> {
    let mut rng = rng::stream(seed, Stream::GradCheck);
    let hyper = spec.hyper();
    let mut params = ModelParams::init(hyper, &mut rng);
    for layer in &mut params.layers {
        for b in [&mut layer.b_z, &mut layer.b_r, &mut layer.b_h] {
            for v in b.iter_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }
    params.b_x = rng.random_range(-0.5..0.5);
    params.c = rng.random_range(0.5..1.5);
    let idf: Vec<f64> = (0..spec.query_terms).map(|_| rng.random_range(0.1..5.0)).collect();

    let mut positive = random_pair(spec, &mut rng);
    let mut negative = random_pair(spec, &mut rng);
    positive.idf = idf.clone();
    negative.idf = idf;
    for _ in 0..1000 {
        let pos = forward(&params, &positive)?;
        let neg = forward(&params, &negative)?;
        let gap_ok = selection_gap(&pos, hyper.k) > MIN_GAP && selection_gap(&neg, hyper.k) > MIN_GAP;
        let loss = hinge_loss(pos.rel, neg.rel);
        if gap_ok && loss > MIN_LOSS {
            break;
        }
        if gap_ok && loss == 0.0 {
            std::mem::swap(&mut positive, &mut negative);
            continue;
        }
        jitter(&mut positive, &mut rng);
        jitter(&mut negative, &mut rng);
    }
    Ok(Instance {
        params,
        positive,
        negative,
    })
}

/// Central-difference gradient of the hinge loss.
pub fn numeric_gradient(instance: &Instance, step: f64) -> Result<ModelParams> {
    let mut params = instance.params.clone();
    let mut grads = params.zeros_like();
    let sizes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    for (t, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = params.tensors()[t].1[i];
            params.tensors_mut()[t].1[i] = orig + step;
            let up = instance.loss(&params)?;
            params.tensors_mut()[t].1[i] = orig - step;
            let down = instance.loss(&params)?;
            params.tensors_mut()[t].1[i] = orig;
            grads.tensors_mut()[t].1[i] = (up - down) / (2.0 * step);
        }
    }
    Ok(grads)
}

/// Relative error with a floor on the denominator so that entries which
/// are zero up to rounding do not dominate.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let diff = (a - b).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / a.abs().max(b.abs()).max(REL_FLOOR)
}

pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.tensors.iter().filter(|t| !t.passed).map(|t| t.name.as_str()).collect()
    }
}

/// Compares a supplied gradient against central differences, tensor by
/// tensor.
pub fn compare_gradients(instance: &Instance, analytic: &ModelParams, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let numeric = numeric_gradient(instance, step)?;
    let mut tensors = Vec::new();
    for ((name, a), (_, n)) in analytic.tensors().into_iter().zip(numeric.tensors()) {
        let mut check = TensorCheck {
            name,
            coords: a.len(),
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: 0,
            passed: true,
        };
        for (i, (&x, &y)) in a.iter().zip(n).enumerate() {
            let rel = relative_error(x, y);
            check.max_abs_error = check.max_abs_error.max((x - y).abs());
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
        }
        check.passed = check.max_rel_error < tolerance;
        tensors.push(check);
    }
    Ok(GradCheckReport {
        loss: instance.loss(&instance.params)?,
        tolerance,
        tensors,
    })
}

pub fn grad_check(instance: &Instance, tolerance: f64) -> Result<GradCheckReport> {
    compare_gradients(instance, &instance.analytic_gradient()?, DEFAULT_STEP, tolerance)
}

/// The instance shapes exercised by the `gradcheck` command.
pub fn standard_specs() -> Vec<InstanceSpec> {
    let mut tied = InstanceSpec::new(12, 4, 2, 3);
    tied.ties = true;
    let mut unshared = InstanceSpec::new(12, 4, 2, 3);
    unshared.shared_weights = false;
    vec![
        InstanceSpec::new(12, 4, 2, 3),
        InstanceSpec::new(1, 2, 2, 3),
        InstanceSpec::new(5, 3, 2, 8),
        tied,
        unshared,
    ]
}
