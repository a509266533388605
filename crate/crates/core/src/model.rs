//! Relevance scoring over a document graph: gated propagation of query
//! matching signals, per-term k-max readout, idf gating and a shared scorer.
//!
//! Node states are `n x M_max` matrices whose columns are query positions.
//! Columns past the real query length are padding: they start at zero, are
//! forced back to zero in every message and updated state, and are skipped by
//! the readout and the gate softmax. Weights touching padded columns therefore
//! never affect the score.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::NormAdjacency;
use crate::tensor::{sigmoid, Mat};

pub const DEFAULT_LAYERS: usize = 2;
pub const DEFAULT_K: usize = 40;
pub const DEFAULT_M_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hyper {
    /// Number of propagation steps `t`.
    pub layers: usize,
    /// Values kept per query term by the k-max readout.
    pub k: usize,
    /// Padded query length.
    pub m_max: usize,
    /// Reuse one set of propagation weights at every step.
    pub shared_weights: bool,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            layers: DEFAULT_LAYERS,
            k: DEFAULT_K,
            m_max: DEFAULT_M_MAX,
            shared_weights: true,
        }
    }
}

impl Hyper {
    /// Number of distinct weight sets stored.
    pub fn num_weight_sets(&self) -> usize {
        if self.shared_weights {
            1
        } else {
            self.layers
        }
    }
}

/// Aggregation matrix and GRU gate weights for one propagation step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruLayer {
    pub w_a: Mat,
    pub w_z: Mat,
    pub u_z: Mat,
    pub b_z: Vec<f64>,
    pub w_r: Mat,
    pub u_r: Mat,
    pub b_r: Vec<f64>,
    pub w_h: Mat,
    pub u_h: Mat,
    pub b_h: Vec<f64>,
}

pub const LAYER_TENSORS: [&str; 10] = ["w_a", "w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

impl GruLayer {
    pub fn zeros(m: usize) -> Self {
        let z = || Mat::zeros(m, m);
        Self {
            w_a: z(),
            w_z: z(),
            u_z: z(),
            b_z: vec![0.0; m],
            w_r: z(),
            u_r: z(),
            b_r: vec![0.0; m],
            w_h: z(),
            u_h: z(),
            b_h: vec![0.0; m],
        }
    }

    fn tensors(&self) -> [&[f64]; 10] {
        [
            self.w_a.as_slice(),
            self.w_z.as_slice(),
            self.u_z.as_slice(),
            &self.b_z,
            self.w_r.as_slice(),
            self.u_r.as_slice(),
            &self.b_r,
            self.w_h.as_slice(),
            self.u_h.as_slice(),
            &self.b_h,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 10] {
        [
            self.w_a.as_mut_slice(),
            self.w_z.as_mut_slice(),
            self.u_z.as_mut_slice(),
            &mut self.b_z,
            self.w_r.as_mut_slice(),
            self.u_r.as_mut_slice(),
            &mut self.b_r,
            self.w_h.as_mut_slice(),
            self.u_h.as_mut_slice(),
            &mut self.b_h,
        ]
    }
}

/// All trainable tensors. The same shape is reused for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyper,
    pub layers: Vec<GruLayer>,
    pub w_x: Vec<f64>,
    pub b_x: f64,
    pub c: f64,
}

impl ModelParams {
    pub fn zeros(hyper: Hyper) -> Self {
        Self {
            hyper,
            layers: (0..hyper.num_weight_sets()).map(|_| GruLayer::zeros(hyper.m_max)).collect(),
            w_x: vec![0.0; hyper.k],
            b_x: 0.0,
            c: 0.0,
        }
    }

    /// Glorot-uniform matrices, zero biases and `c = 1`.
    pub fn init(hyper: Hyper, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(hyper);
        let m = hyper.m_max as f64;
        let bound = (6.0 / (m + m)).sqrt();
        for layer in &mut p.layers {
            for mat in [
                &mut layer.w_a,
                &mut layer.w_z,
                &mut layer.u_z,
                &mut layer.w_r,
                &mut layer.u_r,
                &mut layer.w_h,
                &mut layer.u_h,
            ] {
                for v in mat.as_mut_slice() {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        let bound = (6.0 / (hyper.k as f64 + 1.0)).sqrt();
        for v in &mut p.w_x {
            *v = rng.random_range(-bound..bound);
        }
        p.c = 1.0;
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.hyper)
    }

    pub fn layer_for_step(&self, step: usize) -> &GruLayer {
        if self.hyper.shared_weights {
            &self.layers[0]
        } else {
            &self.layers[step]
        }
    }

    fn layer_for_step_mut(&mut self, step: usize) -> &mut GruLayer {
        if self.hyper.shared_weights {
            &mut self.layers[0]
        } else {
            &mut self.layers[step]
        }
    }

    /// Named flat views of every tensor, in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSORS.iter().zip(layer.tensors()) {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("w_x".into(), self.w_x.as_slice()));
        out.push(("b_x".into(), std::slice::from_ref(&self.b_x)));
        out.push(("c".into(), std::slice::from_ref(&self.c)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (name, t) in LAYER_TENSORS.iter().zip(layer.tensors_mut()) {
                out.push((format!("layer{l}.{name}"), t));
            }
        }
        out.push(("w_x".into(), self.w_x.as_mut_slice()));
        out.push(("b_x".into(), std::slice::from_mut(&mut self.b_x)));
        out.push(("c".into(), std::slice::from_mut(&mut self.c)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let h = self.hyper;
        if h.k == 0 || h.m_max == 0 {
            return Err(Error::Shape("k and m_max must be positive".into()));
        }
        if self.layers.len() != h.num_weight_sets() {
            return Err(Error::Shape(format!(
                "expected {} weight sets, found {}",
                h.num_weight_sets(),
                self.layers.len()
            )));
        }
        for layer in &self.layers {
            for t in layer.tensors() {
                if t.len() != h.m_max * h.m_max && t.len() != h.m_max {
                    return Err(Error::Shape("layer tensor has the wrong size".into()));
                }
            }
        }
        if self.w_x.len() != h.k {
            return Err(Error::Shape(format!("w_x has {} entries, expected {}", self.w_x.len(), h.k)));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        for (name, t) in self.tensors() {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(name);
            }
        }
        Ok(())
    }
}

/// One query/document pair prepared for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub adjacency: NormAdjacency,
    /// `n x M` cosine similarities (unpadded).
    pub interaction: Mat,
    /// idf per real query term.
    pub idf: Vec<f64>,
}

/// Zero-padded initial node states with the real-term mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedQuery {
    pub h0: Mat,
    pub mask: Vec<bool>,
    pub idf: Vec<f64>,
    pub truncated: bool,
}

/// Pads (or truncates to the first `m_max` terms) the interaction matrix.
pub fn pad_query(interaction: &Mat, idf: &[f64], m_max: usize) -> Result<PaddedQuery> {
    let m = interaction.cols();
    if m == 0 {
        return Err(Error::EmptyQuery("<unnamed>".into()));
    }
    if idf.len() != m {
        return Err(Error::Shape(format!("{} idf values for {m} query terms", idf.len())));
    }
    let keep = m.min(m_max);
    let mut h0 = Mat::zeros(interaction.rows(), m_max);
    for i in 0..interaction.rows() {
        h0.row_mut(i)[..keep].copy_from_slice(&interaction.row(i)[..keep]);
    }
    let mut padded_idf = vec![0.0; m_max];
    padded_idf[..keep].copy_from_slice(&idf[..keep]);
    Ok(PaddedQuery {
        h0,
        mask: (0..m_max).map(|j| j < keep).collect(),
        idf: padded_idf,
        truncated: m > m_max,
    })
}

/// `a_i = sum_j A~_ij W_a h_j`. Also returns `A~ H` for the backward pass.
pub fn propagate(h: &Mat, adjacency: &NormAdjacency, w_a: &Mat) -> (Mat, Mat) {
    let p = adjacency.matmul(h);
    let a = p.matmul_t(w_a);
    (p, a)
}

/// Gate activations of one update.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    pub z: Mat,
    pub r: Mat,
    pub candidate: Mat,
    pub h_next: Mat,
}

/// Gated state update (no padding mask applied).
pub fn gru_update(a: &Mat, h: &Mat, layer: &GruLayer) -> GruStep {
    let gate = |w: &Mat, u: &Mat, b: &[f64], hin: &Mat| {
        let mut pre = a.matmul_t(w);
        hin.matmul_t_acc(u, &mut pre);
        pre.add_row_vector(b);
        pre
    };
    let z = gate(&layer.w_z, &layer.u_z, &layer.b_z, h).map(sigmoid);
    let r = gate(&layer.w_r, &layer.u_r, &layer.b_r, h).map(sigmoid);
    let rh = r.zip_map(h, |r, h| r * h);
    let candidate = gate(&layer.w_h, &layer.u_h, &layer.b_h, &rh).map(f64::tanh);
    let mut h_next = candidate.zip_map(&z, |c, z| c * z);
    for (o, (hv, zv)) in h_next
        .as_mut_slice()
        .iter_mut()
        .zip(h.as_slice().iter().zip(z.as_slice()))
    {
        *o += hv * (1.0 - zv);
    }
    GruStep { z, r, candidate, h_next }
}

fn apply_mask(h: &mut Mat, mask: &[bool]) {
    for i in 0..h.rows() {
        for (v, &keep) in h.row_mut(i).iter_mut().zip(mask) {
            if !keep {
                *v = 0.0;
            }
        }
    }
}

/// Per-term k-max pooling: the `k` largest entries of each real column in
/// descending order (ties to the lower node index), zero-padded when the
/// graph has fewer than `k` nodes. Masked columns yield empty vectors.
pub fn readout(h: &Mat, k: usize, mask: &[bool]) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let mut xs = Vec::with_capacity(mask.len());
    let mut selected = Vec::with_capacity(mask.len());
    let mut order: Vec<usize> = Vec::with_capacity(h.rows());
    for (j, &real) in mask.iter().enumerate() {
        if !real {
            xs.push(Vec::new());
            selected.push(Vec::new());
            continue;
        }
        order.clear();
        order.extend(0..h.rows());
        let cmp = |&a: &usize, &b: &usize| h[(b, j)].total_cmp(&h[(a, j)]).then(a.cmp(&b));
        let take = k.min(order.len());
        if take < order.len() && take > 0 {
            order.select_nth_unstable_by(take - 1, cmp);
        }
        order.truncate(take);
        order.sort_by(cmp);
        let mut x: Vec<f64> = order.iter().map(|&i| h[(i, j)]).collect();
        x.resize(k, 0.0);
        xs.push(x);
        selected.push(order.clone());
    }
    (xs, selected)
}

/// Softmax of `c * idf` over real terms; padded terms get weight 0.
pub fn gate_weights(idf: &[f64], c: f64, mask: &[bool]) -> Vec<f64> {
    let max = idf
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| c * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut g: Vec<f64> = idf
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (c * v - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = g.iter().sum();
    for v in &mut g {
        *v /= total;
    }
    g
}

/// `rel = sum_j g_j tanh(w_x . x_j + b_x)` over real terms. Returns the score
/// and the per-term `tanh` values (0 for padded terms).
pub fn score(xs: &[Vec<f64>], gates: &[f64], w_x: &[f64], b_x: f64, mask: &[bool]) -> (f64, Vec<f64>) {
    let mut rel = 0.0;
    let mut terms = vec![0.0; mask.len()];
    for j in 0..mask.len() {
        if !mask[j] {
            continue;
        }
        let u: f64 = xs[j].iter().zip(w_x).map(|(x, w)| x * w).sum::<f64>() + b_x;
        terms[j] = u.tanh();
        rel += gates[j] * terms[j];
    }
    (rel, terms)
}

/// Intermediates of one propagation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    /// `A~ H` before the `W_a` projection.
    pub aggregated: Mat,
    pub messages: Mat,
    pub z: Mat,
    pub r: Mat,
    pub candidate: Mat,
}

/// Everything the backward pass needs to differentiate one score.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'a> {
    pub adjacency: &'a NormAdjacency,
    /// Node states `h^0 ..= h^t`.
    pub states: Vec<Mat>,
    pub steps: Vec<StepTrace>,
    pub mask: Vec<bool>,
    pub idf: Vec<f64>,
    pub selected: Vec<Vec<usize>>,
    pub pooled: Vec<Vec<f64>>,
    pub gates: Vec<f64>,
    pub term_scores: Vec<f64>,
    pub rel: f64,
}

impl ForwardTrace<'_> {
    pub fn final_state(&self) -> &Mat {
        self.states.last().expect("trace always holds h^0")
    }
}

pub fn forward<'a>(params: &ModelParams, input: &'a PairInput) -> Result<ForwardTrace<'a>> {
    let hyper = params.hyper;
    if input.adjacency.len() != input.interaction.rows() {
        return Err(Error::Shape(format!(
            "adjacency has {} nodes but interaction matrix has {} rows",
            input.adjacency.len(),
            input.interaction.rows()
        )));
    }
    let padded = pad_query(&input.interaction, &input.idf, hyper.m_max)?;
    let mut states = vec![padded.h0];
    let mut steps = Vec::with_capacity(hyper.layers);
    for step in 0..hyper.layers {
        let layer = params.layer_for_step(step);
        let h = states.last().expect("non-empty");
        let (aggregated, mut messages) = propagate(h, &input.adjacency, &layer.w_a);
        apply_mask(&mut messages, &padded.mask);
        let GruStep {
            z,
            r,
            candidate,
            mut h_next,
        } = gru_update(&messages, h, layer);
        apply_mask(&mut h_next, &padded.mask);
        steps.push(StepTrace {
            aggregated,
            messages,
            z,
            r,
            candidate,
        });
        states.push(h_next);
    }
    let (pooled, selected) = readout(states.last().expect("non-empty"), hyper.k, &padded.mask);
    let gates = gate_weights(&padded.idf, params.c, &padded.mask);
    let (rel, term_scores) = score(&pooled, &gates, &params.w_x, params.b_x, &padded.mask);
    Ok(ForwardTrace {
        adjacency: &input.adjacency,
        states,
        steps,
        mask: padded.mask,
        idf: padded.idf,
        selected,
        pooled,
        gates,
        term_scores,
        rel,
    })
}

/// Relevance score of one pair.
pub fn relevance(params: &ModelParams, input: &PairInput) -> Result<f64> {
    Ok(forward(params, input)?.rel)
}

/// Adds `scale * d rel / d theta` for one trace into `grads`.
pub fn accumulate_gradient(params: &ModelParams, trace: &ForwardTrace<'_>, scale: f64, grads: &mut ModelParams) {
    let hyper = params.hyper;
    let n = trace.final_state().rows();
    let m = hyper.m_max;

    // score and gate
    let gbar: f64 = trace.gates.iter().zip(&trace.idf).map(|(g, i)| g * i).sum();
    let mut dh = Mat::zeros(n, m);
    for j in 0..m {
        if !trace.mask[j] {
            continue;
        }
        let g = trace.gates[j];
        let s = trace.term_scores[j];
        grads.c += scale * g * s * (trace.idf[j] - gbar);
        let du = scale * g * (1.0 - s * s);
        grads.b_x += du;
        for (gw, x) in grads.w_x.iter_mut().zip(&trace.pooled[j]) {
            *gw += du * x;
        }
        for (p, &node) in trace.selected[j].iter().enumerate() {
            dh[(node, j)] += du * params.w_x[p];
        }
    }

    for step in (0..hyper.layers).rev() {
        let layer = params.layer_for_step(step);
        let st = &trace.steps[step];
        let h = &trace.states[step];
        apply_mask(&mut dh, &trace.mask);

        let mut d_prev = Mat::zeros(n, m);
        let mut d_cpre = Mat::zeros(n, m);
        let mut d_zpre = Mat::zeros(n, m);
        for idx in 0..n * m {
            let dout = dh.as_slice()[idx];
            let z = st.z.as_slice()[idx];
            let c = st.candidate.as_slice()[idx];
            let hv = h.as_slice()[idx];
            d_cpre.as_mut_slice()[idx] = dout * z * (1.0 - c * c);
            d_zpre.as_mut_slice()[idx] = dout * (c - hv) * z * (1.0 - z);
            d_prev.as_mut_slice()[idx] = dout * (1.0 - z);
        }
        let rh = st.r.zip_map(h, |r, h| r * h);
        let g = grads.layer_for_step_mut(step);

        d_cpre.t_matmul_acc(&st.messages, &mut g.w_h);
        d_cpre.t_matmul_acc(&rh, &mut g.u_h);
        d_cpre.col_sum_acc(&mut g.b_h);
        let mut d_msg = Mat::zeros(n, m);
        d_cpre.matmul_acc(&layer.w_h, &mut d_msg);
        let mut d_rh = Mat::zeros(n, m);
        d_cpre.matmul_acc(&layer.u_h, &mut d_rh);

        let mut d_rpre = Mat::zeros(n, m);
        for idx in 0..n * m {
            let drh = d_rh.as_slice()[idx];
            let r = st.r.as_slice()[idx];
            let hv = h.as_slice()[idx];
            d_rpre.as_mut_slice()[idx] = drh * hv * r * (1.0 - r);
            d_prev.as_mut_slice()[idx] += drh * r;
        }

        d_zpre.t_matmul_acc(&st.messages, &mut g.w_z);
        d_zpre.t_matmul_acc(h, &mut g.u_z);
        d_zpre.col_sum_acc(&mut g.b_z);
        d_zpre.matmul_acc(&layer.w_z, &mut d_msg);
        d_zpre.matmul_acc(&layer.u_z, &mut d_prev);

        d_rpre.t_matmul_acc(&st.messages, &mut g.w_r);
        d_rpre.t_matmul_acc(h, &mut g.u_r);
        d_rpre.col_sum_acc(&mut g.b_r);
        d_rpre.matmul_acc(&layer.w_r, &mut d_msg);
        d_rpre.matmul_acc(&layer.u_r, &mut d_prev);

        apply_mask(&mut d_msg, &trace.mask);
        d_msg.t_matmul_acc(&st.aggregated, &mut g.w_a);
        let mut d_agg = Mat::zeros(n, m);
        d_msg.matmul_acc(&layer.w_a, &mut d_agg);
        trace.adjacency.matmul_acc(&d_agg, &mut d_prev);

        dh = d_prev;
    }
}
