//! Edge-conditioned message passing, attention pooling and a two-layer
//! classifier head, with an explicit reverse pass.
//!
//! For `l = 1..=L`, with `h⁰ = x`:
//!
//! ```text
//! c_i   = mean over incoming edges j→i of [h_j ; e_ji]     (zero if none)
//! h_i   = relu(W_self h_i + W_msg c_i + b)
//! ```
//!
//! Averaging the concatenated inputs and applying `W_msg` once is the same as
//! averaging the per-edge messages `W_msg [h_j ; e_ji]`, by linearity.
//!
//! Readout and head:
//!
//! ```text
//! s_i = u · tanh(W_a h_i + b_a)      α = softmax(s)      g = Σ α_i h_i
//! z   = W_2 relu(W_1 g + b_1) + b_2  p = softmax(z)
//! ```
//!
//! All arithmetic is `f64`. Parameters are initialized on the `f32` grid so
//! that writing them to a checkpoint is lossless.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Category;
use crate::graph::{TurnGraph, EDGE_FEAT_DIM};
use crate::rng::Prng;

pub const N_CLASSES: usize = Category::COUNT;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("graph {id:?} has feature dim {got}, model expects {expected}")]
    InputDim { id: String, expected: usize, got: usize },
    #[error("graph {id:?} has no nodes")]
    EmptyGraph { id: String },
    #[error("graph {id:?}: non-finite value in {stage}")]
    NonFinite { id: String, stage: &'static str },
    #[error("trace does not match graph/parameters: {0}")]
    StaleTrace(&'static str),
    #[error("gold class index {0} out of range")]
    BadClass(usize),
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub attn_dim: usize,
    pub head_dim: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            input_dim: 384,
            hidden_dim: 128,
            layers: 2,
            attn_dim: 64,
            head_dim: 64,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("layers", self.layers),
            ("attn_dim", self.attn_dim),
            ("head_dim", self.head_dim),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(ModelError::Hyperparams(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += M x`
    fn mul_add(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += Mᵀ y`
    fn mul_t_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `M += y xᵀ`
    fn outer_add(&mut self, y: &[f64], x: &[f64]) {
        let cols = self.cols;
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, x, &mut self.data[r * cols..(r + 1) * cols]);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_self: Matrix,
    pub w_msg: Matrix,
    pub bias: Vec<f64>,
}

/// Every learnable tensor. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub hp: Hyperparams,
    pub layers: Vec<LayerParams>,
    pub attn_w: Matrix,
    pub attn_b: Vec<f64>,
    pub attn_u: Vec<f64>,
    pub head_w1: Matrix,
    pub head_b1: Vec<f64>,
    pub head_w2: Matrix,
    pub head_b2: Vec<f64>,
}

pub type ParameterGradients = ModelParameters;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ModelParameters {
    pub fn zeros(hp: Hyperparams) -> Self {
        let h = hp.hidden_dim;
        let layers = (0..hp.layers)
            .map(|l| {
                let h_in = if l == 0 { hp.input_dim } else { h };
                LayerParams {
                    w_self: Matrix::zeros(h, h_in),
                    w_msg: Matrix::zeros(h, h_in + EDGE_FEAT_DIM),
                    bias: vec![0.0; h],
                }
            })
            .collect();
        Self {
            hp,
            layers,
            attn_w: Matrix::zeros(hp.attn_dim, h),
            attn_b: vec![0.0; hp.attn_dim],
            attn_u: vec![0.0; hp.attn_dim],
            head_w1: Matrix::zeros(hp.head_dim, h),
            head_b1: vec![0.0; hp.head_dim],
            head_w2: Matrix::zeros(N_CLASSES, hp.head_dim),
            head_b2: vec![0.0; N_CLASSES],
        }
    }

    /// Tensor names and shapes in the fixed serialization order: layers
    /// first (`w_self`, `w_msg`, `bias`), then pooler (`w_a`, `b_a`, `u`),
    /// then head (`w1`, `b1`, `w2`, `b2`).
    pub fn manifest(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| out.push(TensorSpec { name, shape });
        for (l, layer) in self.layers.iter().enumerate() {
            push(format!("layer{}.w_self", l + 1), vec![layer.w_self.rows, layer.w_self.cols]);
            push(format!("layer{}.w_msg", l + 1), vec![layer.w_msg.rows, layer.w_msg.cols]);
            push(format!("layer{}.bias", l + 1), vec![layer.bias.len()]);
        }
        push("pool.w_a".into(), vec![self.attn_w.rows, self.attn_w.cols]);
        push("pool.b_a".into(), vec![self.attn_b.len()]);
        push("pool.u".into(), vec![self.attn_u.len()]);
        push("head.w1".into(), vec![self.head_w1.rows, self.head_w1.cols]);
        push("head.b1".into(), vec![self.head_b1.len()]);
        push("head.w2".into(), vec![self.head_w2.rows, self.head_w2.cols]);
        push("head.b2".into(), vec![self.head_b2.len()]);
        out
    }

    /// Flat views in manifest order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(&layer.w_self.data);
            out.push(&layer.w_msg.data);
            out.push(&layer.bias);
        }
        out.extend([
            &self.attn_w.data[..],
            &self.attn_b,
            &self.attn_u,
            &self.head_w1.data,
            &self.head_b1,
            &self.head_w2.data,
            &self.head_b2,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.w_self.data);
            out.push(&mut layer.w_msg.data);
            out.push(&mut layer.bias);
        }
        out.extend([
            &mut self.attn_w.data[..],
            &mut self.attn_b,
            &mut self.attn_u,
            &mut self.head_w1.data,
            &mut self.head_b1,
            &mut self.head_w2.data,
            &mut self.head_b2,
        ]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(scale, src, dst);
        }
    }

    /// Rounds every entry to the nearest `f32`, matching what a checkpoint
    /// stores.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// Glorot-uniform weights, zero biases.
///
/// Weight tensors are filled in manifest order, row-major, each entry
/// `bound * (2u - 1)` with `u` from a stream derived from `seed` and
/// `bound = sqrt(6 / (fan_in + fan_out))`. The attention vector `u` is
/// treated as an `attn_dim -> 1` map. Values are rounded to `f32`.
pub fn init_params(hp: Hyperparams, seed: u64) -> ModelParameters {
    let mut params = ModelParameters::zeros(hp);
    let mut rng = Prng::stream(seed, "init");
    let mut fill = |data: &mut [f64], fan_in: usize, fan_out: usize| {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in data.iter_mut() {
            *v = (bound * (2.0 * rng.unit_f64() - 1.0)) as f32 as f64;
        }
    };
    for layer in &mut params.layers {
        let (r, c) = (layer.w_self.rows, layer.w_self.cols);
        fill(&mut layer.w_self.data, c, r);
        let (r, c) = (layer.w_msg.rows, layer.w_msg.cols);
        fill(&mut layer.w_msg.data, c, r);
    }
    let (r, c) = (params.attn_w.rows, params.attn_w.cols);
    fill(&mut params.attn_w.data, c, r);
    let a = params.attn_u.len();
    fill(&mut params.attn_u, a, 1);
    let (r, c) = (params.head_w1.rows, params.head_w1.cols);
    fill(&mut params.head_w1.data, c, r);
    let (r, c) = (params.head_w2.rows, params.head_w2.cols);
    fill(&mut params.head_w2.data, c, r);
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    /// Mean of `[h_j ; e_ji]` over incoming edges, `n × (h_in + 3)`.
    pub agg: Vec<Vec<f64>>,
    /// Pre-activation, `n × H`.
    pub pre: Vec<Vec<f64>>,
    /// Post-ReLU output, `n × H`.
    pub out: Vec<Vec<f64>>,
}

/// Every intermediate needed by [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub inputs: Vec<Vec<f64>>,
    pub in_degree: Vec<usize>,
    pub layers: Vec<LayerTrace>,
    /// `tanh(W_a h_i + b_a)` per node.
    pub attn_hidden: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub attention: Vec<f64>,
    pub pooled: Vec<f64>,
    pub head_pre: Vec<f64>,
    pub head_hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ForwardTrace {
    /// Final node embeddings `h^L`.
    pub fn node_embeddings(&self) -> &[Vec<f64>] {
        self.layers.last().map(|l| &l.out[..]).unwrap_or(&self.inputs)
    }

    /// `-ln p[gold]`, computed from the logits with log-sum-exp.
    pub fn loss(&self, gold: usize) -> f64 {
        let max = self.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = self.logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        lse - self.logits[gold]
    }
}

fn check_finite(id: &str, stage: &'static str, xs: &[f64]) -> Result<(), ModelError> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite {
            id: id.to_string(),
            stage,
        })
    }
}

pub fn forward(params: &ModelParameters, g: &TurnGraph) -> Result<ForwardTrace, ModelError> {
    let hp = &params.hp;
    if g.feature_dim != hp.input_dim {
        return Err(ModelError::InputDim {
            id: g.dialogue_id.clone(),
            expected: hp.input_dim,
            got: g.feature_dim,
        });
    }
    let inputs: Vec<Vec<f64>> = (0..g.n_nodes)
        .map(|i| g.node(i).iter().map(|&v| v as f64).collect())
        .collect();
    forward_with_inputs(params, g, inputs)
}

/// [`forward`] with node features supplied in `f64` instead of read from the
/// graph; edges and edge features still come from `g`.
pub fn forward_with_inputs(
    params: &ModelParameters,
    g: &TurnGraph,
    inputs: Vec<Vec<f64>>,
) -> Result<ForwardTrace, ModelError> {
    let hp = &params.hp;
    let n = g.n_nodes;
    if n == 0 {
        return Err(ModelError::EmptyGraph {
            id: g.dialogue_id.clone(),
        });
    }
    if inputs.len() != n || inputs.iter().any(|r| r.len() != hp.input_dim) {
        return Err(ModelError::InputDim {
            id: g.dialogue_id.clone(),
            expected: hp.input_dim,
            got: inputs.iter().map(Vec::len).find(|&l| l != hp.input_dim).unwrap_or(0),
        });
    }
    check_finite(&g.dialogue_id, "node features", &inputs.concat())?;

    let mut in_degree = vec![0usize; n];
    for e in &g.edges {
        in_degree[e.dst] += 1;
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let h_prev = layers.last().map(|l: &LayerTrace| &l.out).unwrap_or(&inputs);
        let h_in = lp.w_self.cols;
        let mut agg = vec![vec![0.0; h_in + EDGE_FEAT_DIM]; n];
        for e in &g.edges {
            let a = &mut agg[e.dst];
            for (dst, src) in a[..h_in].iter_mut().zip(&h_prev[e.src]) {
                *dst += src;
            }
            for (dst, &f) in a[h_in..].iter_mut().zip(&e.feature) {
                *dst += f as f64;
            }
        }
        for (a, &deg) in agg.iter_mut().zip(&in_degree) {
            if deg > 0 {
                let inv = 1.0 / deg as f64;
                a.iter_mut().for_each(|v| *v *= inv);
            }
        }
        let mut pre = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut z = lp.bias.clone();
            lp.w_self.mul_add(&h_prev[i], &mut z);
            lp.w_msg.mul_add(&agg[i], &mut z);
            out.push(z.iter().map(|&v| v.max(0.0)).collect::<Vec<_>>());
            pre.push(z);
        }
        layers.push(LayerTrace { agg, pre, out });
    }
    let h_last = layers.last().map(|l| &l.out).unwrap_or(&inputs);
    check_finite(&g.dialogue_id, "node embeddings", &h_last.concat())?;

    let mut attn_hidden = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for h in h_last {
        let mut t = params.attn_b.clone();
        params.attn_w.mul_add(h, &mut t);
        t.iter_mut().for_each(|v| *v = v.tanh());
        scores.push(dot(&params.attn_u, &t));
        attn_hidden.push(t);
    }
    let attention = softmax(&scores);
    let mut pooled = vec![0.0; hp.hidden_dim];
    for (a, h) in attention.iter().zip(h_last) {
        axpy(*a, h, &mut pooled);
    }

    let mut head_pre = params.head_b1.clone();
    params.head_w1.mul_add(&pooled, &mut head_pre);
    let head_hidden: Vec<f64> = head_pre.iter().map(|&v| v.max(0.0)).collect();
    let mut logits = params.head_b2.clone();
    params.head_w2.mul_add(&head_hidden, &mut logits);
    check_finite(&g.dialogue_id, "logits", &logits)?;
    let probs = softmax(&logits);

    Ok(ForwardTrace {
        inputs,
        in_degree,
        layers,
        attn_hidden,
        scores,
        attention,
        pooled,
        head_pre,
        head_hidden,
        logits,
        probs,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub loss: f64,
    pub params: ParameterGradients,
    /// d loss / d node features, `n × input_dim`.
    pub inputs: Vec<Vec<f64>>,
}

/// Reverse pass of `-ln p[gold]` through the trace produced by [`forward`].
pub fn backward(
    params: &ModelParameters,
    g: &TurnGraph,
    trace: &ForwardTrace,
    gold: usize,
) -> Result<Gradients, ModelError> {
    if gold >= N_CLASSES {
        return Err(ModelError::BadClass(gold));
    }
    let n = g.n_nodes;
    if trace.inputs.len() != n || trace.attention.len() != n {
        return Err(ModelError::StaleTrace("node count"));
    }
    if trace.layers.len() != params.layers.len() {
        return Err(ModelError::StaleTrace("layer count"));
    }
    if trace.pooled.len() != params.hp.hidden_dim || trace.head_hidden.len() != params.hp.head_dim {
        return Err(ModelError::StaleTrace("hidden width"));
    }
    let mut grads = ModelParameters::zeros(params.hp);

    // Head.
    let mut d_logits = trace.probs.clone();
    d_logits[gold] -= 1.0;
    grads.head_w2.outer_add(&d_logits, &trace.head_hidden);
    grads.head_b2.copy_from_slice(&d_logits);
    let mut d_hidden = vec![0.0; params.hp.head_dim];
    params.head_w2.mul_t_add(&d_logits, &mut d_hidden);
    let d_head_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&trace.head_pre)
        .map(|(d, &p)| if p > 0.0 { *d } else { 0.0 })
        .collect();
    grads.head_w1.outer_add(&d_head_pre, &trace.pooled);
    grads.head_b1.copy_from_slice(&d_head_pre);
    let mut d_pooled = vec![0.0; params.hp.hidden_dim];
    params.head_w1.mul_t_add(&d_head_pre, &mut d_pooled);

    // Attention pooling.
    let h_last = trace.node_embeddings();
    let mut d_h: Vec<Vec<f64>> = trace.attention.iter().map(|&a| d_pooled.iter().map(|d| a * d).collect()).collect();
    let d_alpha: Vec<f64> = h_last.iter().map(|h| dot(h, &d_pooled)).collect();
    let mean_d_alpha = dot(&trace.attention, &d_alpha);
    for i in 0..n {
        let d_score = trace.attention[i] * (d_alpha[i] - mean_d_alpha);
        let t = &trace.attn_hidden[i];
        axpy(d_score, t, &mut grads.attn_u);
        let d_q: Vec<f64> = params
            .attn_u
            .iter()
            .zip(t)
            .map(|(u, t)| d_score * u * (1.0 - t * t))
            .collect();
        grads.attn_w.outer_add(&d_q, &h_last[i]);
        axpy(1.0, &d_q, &mut grads.attn_b);
        params.attn_w.mul_t_add(&d_q, &mut d_h[i]);
    }

    // Message-passing layers, last to first.
    for (l, (lp, lt)) in params.layers.iter().zip(&trace.layers).enumerate().rev() {
        let h_prev = if l == 0 { &trace.inputs } else { &trace.layers[l - 1].out };
        let h_in = lp.w_self.cols;
        let gl = &mut grads.layers[l];
        let mut d_prev = vec![vec![0.0; h_in]; n];
        let mut d_agg = vec![vec![0.0; h_in + EDGE_FEAT_DIM]; n];
        for i in 0..n {
            let d_pre: Vec<f64> = d_h[i]
                .iter()
                .zip(&lt.pre[i])
                .map(|(d, &p)| if p > 0.0 { *d } else { 0.0 })
                .collect();
            gl.w_self.outer_add(&d_pre, &h_prev[i]);
            gl.w_msg.outer_add(&d_pre, &lt.agg[i]);
            axpy(1.0, &d_pre, &mut gl.bias);
            lp.w_self.mul_t_add(&d_pre, &mut d_prev[i]);
            lp.w_msg.mul_t_add(&d_pre, &mut d_agg[i]);
        }
        for e in &g.edges {
            let inv = 1.0 / trace.in_degree[e.dst] as f64;
            axpy(inv, &d_agg[e.dst][..h_in], &mut d_prev[e.src]);
        }
        d_h = d_prev;
    }

    Ok(Gradients {
        loss: trace.loss(gold),
        params: grads,
        inputs: d_h,
    })
}

/// Loss and gradients in one call.
pub fn loss_and_gradients(params: &ModelParameters, g: &TurnGraph, gold: usize) -> Result<Gradients, ModelError> {
    let trace = forward(params, g)?;
    backward(params, g, &trace, gold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub category: Category,
    pub probs: Vec<f64>,
    pub attention: Vec<f64>,
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ModelParameters, g: &TurnGraph) -> Result<Prediction, ModelError> {
    let trace = forward(params, g)?;
    Ok(Prediction {
        category: Category::from_index(argmax(&trace.probs)).expect("six classes"),
        probs: trace.probs,
        attention: trace.attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, EdgeKind, Variant};
    use crate::corpus::Speaker;

    pub(crate) fn small_hp(d: usize) -> Hyperparams {
        Hyperparams {
            input_dim: d,
            hidden_dim: 8,
            layers: 2,
            attn_dim: 8,
            head_dim: 8,
        }
    }

    fn graph(features: Vec<Vec<f32>>, edges: Vec<(usize, usize, [f32; 3])>) -> TurnGraph {
        let n = features.len();
        let d = features[0].len();
        TurnGraph {
            dialogue_id: "t".into(),
            n_nodes: n,
            feature_dim: d,
            node_features: features.concat(),
            speakers: vec![Speaker::User; n],
            edges: edges
                .into_iter()
                .map(|(src, dst, feature)| Edge {
                    src,
                    dst,
                    kind: if feature[0] == 1.0 { EdgeKind::Temporal } else { EdgeKind::Entity },
                    feature,
                })
                .collect(),
            variant: Variant::ET.config(),
        }
    }

    #[test]
    fn softmax_reference() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        let expected = [0.09003, 0.24473, 0.66524];
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 5e-6, "{a} vs {b}");
        }
        let big = softmax(&[1000.0, 1000.0]);
        assert_eq!(big, [0.5, 0.5]);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let hp = Hyperparams::default();
        let a = init_params(hp, 0);
        let b = init_params(hp, 0);
        assert_eq!(a, b);
        assert_ne!(a, init_params(hp, 1));
        for l in &a.layers {
            assert!(l.bias.iter().all(|&v| v == 0.0));
            let bound = (6.0 / (l.w_msg.rows + l.w_msg.cols) as f64).sqrt();
            assert!(l.w_msg.data.iter().all(|v| v.abs() <= bound));
        }
        assert!(a.attn_b.iter().chain(&a.head_b1).chain(&a.head_b2).all(|&v| v == 0.0));
        let bound = (6.0 / (a.head_w2.rows + a.head_w2.cols) as f64).sqrt();
        assert!(a.head_w2.data.iter().all(|v| v.abs() <= bound));
        // already on the f32 grid
        let mut r = a.clone();
        r.round_to_f32();
        assert_eq!(r, a);
    }

    #[test]
    fn manifest_matches_tensors() {
        let p = init_params(small_hp(5), 3);
        let m = p.manifest();
        let t = p.tensors();
        assert_eq!(m.len(), t.len());
        for (spec, data) in m.iter().zip(t) {
            assert_eq!(spec.shape.iter().product::<usize>(), data.len(), "{}", spec.name);
        }
        assert_eq!(m[1].name, "layer1.w_msg");
        assert_eq!(m[1].shape, [8, 5 + 3]);
        assert_eq!(m[4].shape, [8, 8 + 3]);
    }

    #[test]
    fn single_node() {
        let p = init_params(small_hp(4), 1);
        let g = graph(vec![vec![0.1, -0.2, 0.3, 0.4]], vec![]);
        let tr = forward(&p, &g).unwrap();
        assert_eq!(tr.attention, [1.0]);
        assert!(tr.layers.iter().all(|l| l.agg[0].iter().all(|&v| v == 0.0)));
        assert_eq!(tr.pooled, tr.node_embeddings()[0]);
        assert!((tr.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_gets_equal_attention() {
        let p = init_params(small_hp(3), 2);
        let x = vec![0.5, -0.1, 0.2];
        let f = [0.0, 1.0, 0.2];
        let g = graph(vec![x.clone(), x], vec![(0, 1, f), (1, 0, f)]);
        let tr = forward(&p, &g).unwrap();
        assert_eq!(tr.attention, [0.5, 0.5]);
    }

    #[test]
    fn isolated_node_updates_through_self_weight() {
        let p = init_params(small_hp(3), 4);
        let g = graph(vec![vec![1.0, 0.5, -0.5], vec![0.3, 0.3, 0.3]], vec![(0, 1, [1.0, 0.0, 1.0])]);
        let tr = forward(&p, &g).unwrap();
        // node 0 has no incoming edges
        assert_eq!(tr.in_degree, [0, 1]);
        let mut expected = p.layers[0].bias.clone();
        p.layers[0].w_self.mul_add(&tr.inputs[0], &mut expected);
        let expected: Vec<f64> = expected.into_iter().map(|v| v.max(0.0)).collect();
        assert_eq!(tr.layers[0].out[0], expected);
    }

    #[test]
    fn zero_feature_edges_still_carry_content() {
        let p = init_params(small_hp(3), 5);
        let a = graph(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]], vec![(0, 1, [0.0; 3])]);
        let b = graph(vec![vec![-1.0, 2.0, 0.0], vec![0.0, 0.0, 0.0]], vec![(0, 1, [0.0; 3])]);
        let ta = forward(&p, &a).unwrap();
        let tb = forward(&p, &b).unwrap();
        assert_eq!(&ta.layers[0].agg[1][3..], &[0.0; 3]);
        assert_ne!(ta.layers[0].pre[1], tb.layers[0].pre[1]);
    }

    #[test]
    fn logit_gradient_is_p_minus_onehot() {
        let p = init_params(small_hp(3), 6);
        let g = graph(vec![vec![0.2, 0.1, 0.0], vec![0.0, 0.4, 0.9]], vec![(0, 1, [1.0, 0.0, 1.0])]);
        let tr = forward(&p, &g).unwrap();
        let gr = backward(&p, &g, &tr, 2).unwrap();
        for c in 0..N_CLASSES {
            let expected = tr.probs[c] - if c == 2 { 1.0 } else { 0.0 };
            assert!((gr.params.head_b2[c] - expected).abs() < 1e-15);
        }
        assert!(gr.params.is_finite());
        assert!((gr.loss + tr.probs[2].ln()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let p = init_params(small_hp(3), 0);
        let g = graph(vec![vec![0.0; 4]], vec![]);
        assert!(matches!(forward(&p, &g), Err(ModelError::InputDim { expected: 3, got: 4, .. })));
        let g = graph(vec![vec![f32::NAN, 0.0, 0.0]], vec![]);
        assert!(matches!(forward(&p, &g), Err(ModelError::NonFinite { .. })));
        let g1 = graph(vec![vec![0.0; 3]], vec![]);
        let g2 = graph(vec![vec![0.0; 3], vec![0.0; 3]], vec![]);
        let tr = forward(&p, &g1).unwrap();
        assert!(matches!(backward(&p, &g2, &tr, 0), Err(ModelError::StaleTrace(_))));
        assert!(matches!(backward(&p, &g1, &tr, 6), Err(ModelError::BadClass(6))));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.9, 0.02, 0.02, 0.02, 0.02, 0.02]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1, 0.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0, 0.0, 0.0, 0.5, 0.5]), 4);
    }

    #[test]
    fn prediction_contract() {
        let p = init_params(small_hp(3), 9);
        let g = graph(
            vec![vec![0.2, 0.1, 0.0], vec![0.0, 0.4, 0.9], vec![1.0, 1.0, 1.0]],
            vec![(0, 1, [1.0, 0.0, 1.0]), (1, 2, [1.0, 0.0, 0.0])],
        );
        let pred = predict(&p, &g).unwrap();
        assert_eq!(pred.attention.len(), 3);
        assert!((pred.attention.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(pred.category.index(), argmax(&pred.probs));
    }
}
