//! Monotonic Gaussian-mixture attention.
//!
//! Each decoder step projects the decoder state to raw mixture parameters
//! `(w, d, s)` of size `K` each. Means only move forward:
//! `mu' = mu + softplus(d)`, with `softmax(w)` weights and `softplus(s) + eps`
//! scales. The attention weight at encoder position `j` is the unnormalized
//! kernel `sum_k w_k exp(-(j - mu_k)^2 / (2 sigma_k^2))`.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{softmax_row_in_place, softplus, Graph, Mat, Var};
use crate::nn::{Linear, ParamStore};

pub const SCALE_EPS: f64 = 1e-5;
pub const DEFAULT_MIXTURES: usize = 5;

/// Mixture state carried between decoder steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionState {
    pub means: Vec<f64>,
    pub prev_context: Vec<f64>,
    pub step_index: usize,
}

impl AttentionState {
    pub fn initial(mixtures: usize, context_dim: usize) -> Self {
        Self {
            means: vec![0.0; mixtures],
            prev_context: vec![0.0; context_dim],
            step_index: 0,
        }
    }
}

/// Unconstrained mixture parameters for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMixture {
    pub weights: Vec<f64>,
    pub deltas: Vec<f64>,
    pub scales: Vec<f64>,
}

impl RawMixture {
    pub fn from_projection(raw: &[f64]) -> Self {
        let k = raw.len() / 3;
        Self {
            weights: raw[..k].to_vec(),
            deltas: raw[k..2 * k].to_vec(),
            scales: raw[2 * k..3 * k].to_vec(),
        }
    }
}

/// Evaluates the kernel at positions `0..t`.
pub fn gmm_kernel(t: usize, weights: &[f64], means: &[f64], scales: &[f64]) -> Vec<f64> {
    (0..t)
        .map(|j| {
            let x = j as f64;
            weights
                .iter()
                .zip(means)
                .zip(scales)
                .map(|((w, m), s)| w * (-(x - m).powi(2) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect()
}

/// One attention step from explicit raw parameters.
pub fn attention_step(
    state: &AttentionState,
    raw: &RawMixture,
    encoder_outputs: &Array2<f64>,
) -> Result<(Vec<f64>, Vec<f64>, AttentionState)> {
    let k = state.means.len();
    if raw.weights.len() != k || raw.deltas.len() != k || raw.scales.len() != k {
        return Err(Error::Argument(format!("expected {k} mixture components")));
    }
    let t = encoder_outputs.nrows();
    if t == 0 {
        return Err(Error::EmptyInput("attention memory has no positions".into()));
    }
    let all = raw.weights.iter().chain(&raw.deltas).chain(&raw.scales);
    if all.clone().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Numeric("non-finite attention parameters".into()));
    }
    let mut w = Array1::from(raw.weights.clone());
    softmax_row_in_place(w.view_mut());
    let means: Vec<f64> = state.means.iter().zip(&raw.deltas).map(|(m, d)| m + softplus(*d)).collect();
    let scales: Vec<f64> = raw.scales.iter().map(|s| softplus(*s) + SCALE_EPS).collect();
    let weights = gmm_kernel(t, w.as_slice().expect("contiguous"), &means, &scales);
    let context = Array1::from(weights.clone()).dot(encoder_outputs).to_vec();
    let next = AttentionState {
        means,
        prev_context: context.clone(),
        step_index: state.step_index + 1,
    };
    Ok((weights, context, next))
}

/// Fraction of rows whose argmax does not move backwards; the first row counts.
pub fn attention_alignment(weight_rows: &Array2<f64>) -> Result<f64> {
    let (rows, cols) = weight_rows.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Argument("empty alignment matrix".into()));
    }
    let argmax: Vec<usize> = weight_rows.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
    let good = 1 + argmax.windows(2).filter(|w| w[1] >= w[0]).count();
    Ok(good as f64 / rows as f64)
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn inv_softplus(y: f64) -> f64 {
    (y.exp() - 1.0).ln()
}

/// Learned projection from the decoder state to raw mixture parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmmAttention {
    proj: Linear,
    pub mixtures: usize,
}

/// Graph values of one attention step.
pub struct GraphStep {
    /// `1 × T` kernel weights.
    pub weights: Var,
    /// `1 × D` context vector.
    pub context: Var,
    /// `1 × K` updated means.
    pub means: Var,
}

impl GmmAttention {
    /// `advance` sets the initial expected mean step (in encoder positions),
    /// `width` the initial component scale.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        mixtures: usize,
        advance: f64,
        width: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let proj = Linear::new(store, &format!("{name}.proj"), query_dim, 3 * mixtures, rng);
        let bias = store.value_mut(proj.bias_id());
        for k in 0..mixtures {
            bias[[0, mixtures + k]] = inv_softplus(advance.max(1e-3));
            bias[[0, 2 * mixtures + k]] = inv_softplus(width.max(1e-3));
        }
        Self { proj, mixtures }
    }

    /// Position grid constant used by [`GmmAttention::step_graph`].
    pub fn positions(&self, g: &mut Graph, t: usize) -> Var {
        g.constant(Mat::from_shape_fn((t, self.mixtures), |(j, _)| j as f64))
    }

    /// Differentiable step; `positions` comes from [`GmmAttention::positions`].
    pub fn step_graph(&self, g: &mut Graph, store: &ParamStore, query: Var, means: Var, memory: Var, positions: Var) -> GraphStep {
        let raw = self.proj.forward(g, store, query);
        raw_step_graph(g, raw, means, memory, positions, self.mixtures)
    }

    /// Plain step on a frozen model.
    pub fn step(
        &self,
        store: &ParamStore,
        state: &AttentionState,
        decoder_state: &[f64],
        encoder_outputs: &Array2<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>, AttentionState)> {
        if decoder_state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite decoder state".into()));
        }
        let mut g = Graph::new();
        let q = g.row(decoder_state);
        let raw = self.proj.forward(&mut g, store, q);
        attention_step(state, &RawMixture::from_projection(g.value(raw).as_slice().expect("row")), encoder_outputs)
    }
}

/// Graph form of [`attention_step`] given a `1 × 3K` raw parameter row.
pub fn raw_step_graph(g: &mut Graph, raw: Var, means: Var, memory: Var, positions: Var, k: usize) -> GraphStep {
    let rw = g.slice_cols(raw, 0, k);
    let rd = g.slice_cols(raw, k, k);
    let rs = g.slice_cols(raw, 2 * k, k);
    let w = g.softmax_rows(rw);
    let delta = g.softplus(rd);
    let sp = g.softplus(rs);
    let sigma = g.add_scalar(sp, SCALE_EPS);
    let means = g.add(means, delta);
    let neg = g.scale(means, -1.0);
    let diff = g.add_row(positions, neg);
    let sq = g.square(diff);
    let var = g.square(sigma);
    let var2 = g.scale(var, -2.0);
    let inv = g.recip(var2);
    let expo = g.mul_row(sq, inv);
    let kern = g.exp(expo);
    let weighted = g.mul_row(kern, w);
    let ones = g.constant(Mat::ones((k, 1)));
    let col = g.matmul(weighted, ones);
    let weights = g.transpose(col);
    let context = g.matmul(weights, memory);
    GraphStep { weights, context, means }
}
