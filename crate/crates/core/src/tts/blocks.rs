//! Post-LN transformer blocks shared by the Transformer and FastSpeech models.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{positional_encoding, Conv1d, Graph, LayerNorm, Mat, MultiHeadAttention, ParamId, ParamStore, Var};

/// Sinusoidal positions scaled by a trainable scalar.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaledPositions {
    alpha: ParamId,
    dim: usize,
}

impl ScaledPositions {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self { alpha: store.add_const(format!("{name}.alpha"), 1, 1, 1.0), dim }
    }

    /// `x + alpha · PE[offset..offset + rows]`.
    pub fn add(&self, g: &mut Graph, store: &ParamStore, x: Var, offset: usize) -> Var {
        let rows = g.shape(x).0;
        let pe = positional_encoding(offset + rows, self.dim);
        let pe = g.constant(pe.slice(ndarray::s![offset.., ..]).to_owned());
        let a = g.param(store, self.alpha);
        let scaled = g.mul_scalar_var(pe, a);
        g.add(x, scaled)
    }
}

/// Self-attention then a two-layer convolutional feed-forward net, each
/// followed by a residual add and layer norm. Kernel width 1 gives the
/// usual position-wise feed-forward layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FftBlock {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff1: Conv1d,
    ff2: Conv1d,
    ln2: LayerNorm,
}

impl FftBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            ff1: Conv1d::new(store, &format!("{name}.ff1"), dim, ffn, kernel, rng),
            ff2: Conv1d::new(store, &format!("{name}.ff2"), ffn, dim, kernel, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (a, _) = self.attn.forward(g, store, x, x, false);
        let x = residual_norm(g, store, &self.ln1, x, a);
        let h = self.ff1.forward(g, store, x);
        let h = g.relu(h);
        let h = self.ff2.forward(g, store, h);
        residual_norm(g, store, &self.ln2, x, h)
    }
}

/// Causal self-attention, cross-attention over the encoder memory and a
/// position-wise feed-forward layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecoderBlock {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Conv1d,
    ff2: Conv1d,
    ln3: LayerNorm,
}

impl DecoderBlock {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), dim, heads, rng),
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            cross: MultiHeadAttention::new(store, &format!("{name}.cross"), dim, heads, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff1: Conv1d::new(store, &format!("{name}.ff1"), dim, ffn, 1, rng),
            ff2: Conv1d::new(store, &format!("{name}.ff2"), ffn, dim, 1, rng),
            ln3: LayerNorm::new(store, &format!("{name}.ln3"), dim),
        }
    }

    pub fn heads(&self) -> usize {
        self.cross.heads
    }

    /// `x` holds the queries. `history` holds the keys of the causal
    /// self-attention: `x` itself during training (masked), or every block
    /// input so far when decoding one frame at a time (unmasked).
    /// Returns the output and each head's cross-attention probabilities.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        history: Option<Var>,
        memory: Var,
    ) -> (Var, Vec<Var>) {
        let (a, _) = match history {
            Some(h) => self.self_attn.forward(g, store, x, h, false),
            None => self.self_attn.forward(g, store, x, x, true),
        };
        let x = residual_norm(g, store, &self.ln1, x, a);
        let (c, probs) = self.cross.forward(g, store, x, memory, false);
        let x = residual_norm(g, store, &self.ln2, x, c);
        let h = self.ff1.forward(g, store, x);
        let h = g.relu(h);
        let h = self.ff2.forward(g, store, h);
        (residual_norm(g, store, &self.ln3, x, h), probs)
    }
}

fn residual_norm(g: &mut Graph, store: &ParamStore, ln: &LayerNorm, x: Var, y: Var) -> Var {
    let s = g.add(x, y);
    ln.forward(g, store, s)
}

/// Values of per-head probability rows as matrices.
pub fn head_matrices(g: &Graph, probs: &[Var]) -> Vec<Mat> {
    probs.iter().map(|&p| g.value(p).clone()).collect()
}
