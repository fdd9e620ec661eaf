//! Autoregressive attention decoder shared by the VC synthesizer and the
//! Tacotron2 TTS model.
//!
//! Per step: pre-net on the previous frame, LSTM 1 on `[pre-net, context]`,
//! GMM attention queried by LSTM 1's state, LSTM 2 on `[h1, context]`, then
//! projections from `[h2, context]` to `r` feature frames and `r` stop logits.
//! A residual post-net refines the whole predicted sequence.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{GmmAttention, DEFAULT_MIXTURES};
use crate::error::{Error, Result};
use crate::nn::graph::sigmoid;
use crate::nn::{Graph, Linear, LstmCell, Mat, ParamStore, PostNet, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub prenet: usize,
    pub rnn: usize,
    pub mixtures: usize,
    /// Frames emitted per decoder step.
    pub reduction: usize,
    pub postnet_filters: usize,
    /// Inference cap in frames per encoder position.
    pub max_frames_factor: usize,
    pub stop_threshold: f64,
    /// Initial expected attention advance per step, in encoder positions.
    pub init_advance: f64,
    pub init_width: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            prenet: 32,
            rnn: 64,
            mixtures: DEFAULT_MIXTURES,
            reduction: 2,
            postnet_filters: 32,
            max_frames_factor: 30,
            stop_threshold: 0.5,
            init_advance: 1.0,
            init_width: 1.0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prenet == 0 || self.rnn == 0 || self.mixtures == 0 || self.reduction == 0 || self.postnet_filters == 0 {
            return Err(Error::Config("decoder sizes, mixtures and reduction must be positive".into()));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::Config("stop threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttnDecoder {
    pub config: DecoderConfig,
    pub memory_dim: usize,
    pub out_dim: usize,
    prenet1: Linear,
    prenet2: Linear,
    lstm1: LstmCell,
    attention: GmmAttention,
    lstm2: LstmCell,
    feat: Linear,
    stop: Linear,
    postnet: PostNet,
}

/// Graph outputs of a teacher-forced pass over `steps · r` frames.
pub struct DecoderOutputs {
    pub before: Var,
    pub after: Var,
    /// `frames × 1`.
    pub stop_logits: Var,
    /// One `1 × T` weight row per decoder step.
    pub alignment: Vec<Var>,
    pub frames: usize,
}

/// Result of free-running decoding.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub before: Array2<f64>,
    pub after: Array2<f64>,
    pub stop_logits: Vec<f64>,
    /// `steps × T`.
    pub alignment: Array2<f64>,
    /// Decoding hit the frame cap without a stop decision.
    pub truncated: bool,
}

struct StepState {
    h1: Var,
    c1: Var,
    h2: Var,
    c2: Var,
    ctx: Var,
    means: Var,
}

impl AttnDecoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        memory_dim: usize,
        out_dim: usize,
        config: DecoderConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let (p, r, k) = (config.prenet, config.rnn, config.reduction);
        let prenet1 = Linear::new(store, &format!("{name}.prenet1"), out_dim, p, rng);
        let prenet2 = Linear::new(store, &format!("{name}.prenet2"), p, p, rng);
        let lstm1 = LstmCell::new(store, &format!("{name}.lstm1"), p + memory_dim, r, rng);
        let attention = GmmAttention::new(
            store,
            &format!("{name}.attention"),
            r,
            config.mixtures,
            config.init_advance,
            config.init_width,
            rng,
        );
        let lstm2 = LstmCell::new(store, &format!("{name}.lstm2"), r + memory_dim, r, rng);
        let feat = Linear::new(store, &format!("{name}.feat"), r + memory_dim, out_dim * k, rng);
        let stop = Linear::new(store, &format!("{name}.stop"), r + memory_dim, k, rng);
        let postnet = PostNet::new(store, &format!("{name}.postnet"), out_dim, config.postnet_filters, rng);
        Ok(Self { config, memory_dim, out_dim, prenet1, prenet2, lstm1, attention, lstm2, feat, stop, postnet })
    }

    /// Number of decoder steps covering `frames` target frames.
    pub fn steps_for(&self, frames: usize) -> usize {
        frames.div_ceil(self.config.reduction)
    }

    pub fn stop_bias_id(&self) -> crate::nn::ParamId {
        self.stop.bias_id()
    }

    fn init_state(&self, g: &mut Graph) -> StepState {
        let r = self.config.rnn;
        StepState {
            h1: g.zeros(1, r),
            c1: g.zeros(1, r),
            h2: g.zeros(1, r),
            c2: g.zeros(1, r),
            ctx: g.zeros(1, self.memory_dim),
            means: g.zeros(1, self.config.mixtures),
        }
    }

    /// Returns `(features 1 × out·r, stop 1 × r, weights 1 × T)`.
    fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prev: Var,
        st: &mut StepState,
        memory: Var,
        positions: Var,
    ) -> (Var, Var, Var) {
        let p = self.prenet1.forward(g, store, prev);
        let p = g.relu(p);
        let p = self.prenet2.forward(g, store, p);
        let p = g.relu(p);
        let x1 = g.concat_cols(&[p, st.ctx]);
        let (h1, c1) = self.lstm1.step(g, store, x1, st.h1, st.c1);
        let att = self.attention.step_graph(g, store, h1, st.means, memory, positions);
        let x2 = g.concat_cols(&[h1, att.context]);
        let (h2, c2) = self.lstm2.step(g, store, x2, st.h2, st.c2);
        let out_in = g.concat_cols(&[h2, att.context]);
        let feat = self.feat.forward(g, store, out_in);
        let stop = self.stop.forward(g, store, out_in);
        *st = StepState { h1, c1, h2, c2, ctx: att.context, means: att.means };
        (feat, stop, att.weights)
    }

    fn split_frames(&self, g: &mut Graph, feat: Var) -> Vec<Var> {
        (0..self.config.reduction).map(|j| g.slice_cols(feat, j * self.out_dim, self.out_dim)).collect()
    }

    /// Teacher-forced pass; `targets` must already be padded to a multiple
    /// of the reduction factor.
    pub fn teacher_forced(&self, g: &mut Graph, store: &ParamStore, memory: Var, targets: &Mat) -> DecoderOutputs {
        let r = self.config.reduction;
        let frames = targets.nrows();
        debug_assert_eq!(frames % r, 0);
        let t = g.shape(memory).0;
        let positions = self.attention.positions(g, t);
        let mut st = self.init_state(g);
        let mut prev = g.zeros(1, self.out_dim);
        let mut rows = Vec::with_capacity(frames);
        let mut stops = Vec::with_capacity(frames / r);
        let mut alignment = Vec::with_capacity(frames / r);
        for s in 0..frames / r {
            let (feat, stop, w) = self.step(g, store, prev, &mut st, memory, positions);
            rows.extend(self.split_frames(g, feat));
            stops.push(g.transpose(stop));
            alignment.push(w);
            let last = targets.row(s * r + r - 1).to_owned().insert_axis(ndarray::Axis(0));
            prev = g.constant(last);
        }
        let before = g.concat_rows(&rows);
        let after = self.postnet.forward(g, store, before);
        let stop_logits = g.concat_rows(&stops);
        DecoderOutputs { before, after, stop_logits, alignment, frames }
    }

    /// Free-running decoding until a stop decision or `max_frames`.
    pub fn infer(&self, store: &ParamStore, memory: &Mat, max_frames: Option<usize>) -> Result<Decoded> {
        let t = memory.nrows();
        if t == 0 {
            return Err(Error::EmptyInput("decoder memory is empty".into()));
        }
        let cap = max_frames.unwrap_or(self.config.max_frames_factor * t).max(1);
        let r = self.config.reduction;
        let mut g = Graph::new();
        let mem = g.constant(memory.clone());
        let positions = self.attention.positions(&mut g, t);
        let mut st = self.init_state(&mut g);
        let mut prev = g.zeros(1, self.out_dim);
        let mut frames: Vec<Var> = Vec::new();
        let mut stop_logits = Vec::new();
        let mut align_rows = Vec::new();
        let mut truncated = true;
        'outer: while frames.len() < cap {
            let (feat, stop, w) = self.step(&mut g, store, prev, &mut st, mem, positions);
            align_rows.push(g.value(w).row(0).to_owned());
            let split = self.split_frames(&mut g, feat);
            prev = *split.last().expect("reduction >= 1");
            for (j, f) in split.into_iter().enumerate().take(r) {
                if frames.len() >= cap {
                    break 'outer;
                }
                let logit = g.value(stop)[[0, j]];
                frames.push(f);
                stop_logits.push(logit);
                if sigmoid(logit) > self.config.stop_threshold {
                    truncated = false;
                    break 'outer;
                }
            }
            let v = g.value(prev);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numeric("decoder produced non-finite frames".into()));
            }
        }
        let before_var = g.concat_rows(&frames);
        let after_var = self.postnet.forward(&mut g, store, before_var);
        let alignment = Array2::from_shape_fn((align_rows.len(), t), |(i, j)| align_rows[i][j]);
        if truncated {
            log::warn!("decoding stopped at the {cap}-frame cap without a stop decision");
        }
        Ok(Decoded {
            before: g.value(before_var).clone(),
            after: g.value(after_var).clone(),
            stop_logits,
            alignment,
            truncated,
        })
    }
}

/// Pads `target` to a multiple of `r` by repeating its last frame and builds
/// the matching stop targets (1 from the last real frame on).
pub fn pad_targets(target: &Mat, r: usize) -> (Mat, Mat) {
    let n = target.nrows();
    let padded_len = n.div_ceil(r) * r;
    let padded = Mat::from_shape_fn((padded_len, target.ncols()), |(i, j)| target[[i.min(n - 1), j]]);
    let stops = Mat::from_shape_fn((padded_len, 1), |(i, _)| if i + 1 >= n { 1.0 } else { 0.0 });
    (padded, stops)
}

/// Sequence-to-sequence loss: MSE before and after the post-net on the real
/// frames plus stop-token cross-entropy over all decoded frames.
pub fn seq2seq_loss(g: &mut Graph, out: &DecoderOutputs, target: &Mat, stop_targets: Mat) -> Var {
    let n = target.nrows();
    let tgt = g.constant(target.clone());
    let before = g.slice_rows(out.before, 0, n);
    let after = g.slice_rows(out.after, 0, n);
    let l1 = g.mse(before, tgt);
    let l2 = g.mse(after, tgt);
    let l3 = g.bce_with_logits(out.stop_logits, stop_targets);
    let s = g.add(l1, l2);
    g.add(s, l3)
}

/// Plain-number version of [`seq2seq_loss`].
pub fn seq2seq_loss_value(
    before: &Mat,
    after: &Mat,
    stop_logits: &[f64],
    target: &Mat,
    stop_targets: &[f64],
) -> Result<f64> {
    if before.dim() != target.dim() || after.dim() != target.dim() || stop_logits.len() != stop_targets.len() {
        return Err(Error::Data("prediction and target shapes differ".into()));
    }
    let finite = before.iter().chain(after.iter()).chain(stop_logits).all(|v| v.is_finite());
    if !finite {
        return Err(Error::Numeric("non-finite prediction".into()));
    }
    let mse = |a: &Mat| (a - target).mapv(|d| d * d).mean().unwrap_or(0.0);
    let bce = stop_logits
        .iter()
        .zip(stop_targets)
        .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
        .sum::<f64>()
        / stop_logits.len().max(1) as f64;
    Ok(mse(before) + mse(after) + bce)
}

/// Stacks per-step `1 × T` weight rows into a matrix.
pub fn alignment_matrix(g: &Graph, rows: &[Var]) -> Array2<f64> {
    let t = rows.first().map(|&v| g.shape(v).1).unwrap_or(0);
    Array2::from_shape_fn((rows.len(), t), |(i, j)| g.value(rows[i])[[0, j]])
}
