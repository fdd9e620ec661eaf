use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Mat, Var};
use super::params::{ParamId, ParamStore};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w: store.add_glorot(format!("{name}.w"), in_dim, out_dim, rng),
            b: Some(store.add_const(format!("{name}.b"), 1, out_dim, 0.0)),
            in_dim,
            out_dim,
        }
    }

    /// A projection without bias, for places where a bias cannot change the
    /// result (such as attention keys under a softmax).
    pub fn unbiased(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { w: store.add_glorot(format!("{name}.w"), in_dim, out_dim, rng), b: None, in_dim, out_dim }
    }

    pub fn bias_id(&self) -> ParamId {
        self.b.expect("layer has a bias")
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_const(format!("{name}.gain"), 1, dim, 1.0),
            bias: store.add_const(format!("{name}.bias"), 1, dim, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm_rows(x, Self::EPS);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Time-axis 1-D convolution over a `T × C` sequence with "same" padding.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Conv1d {
    lin: Linear,
    kernel: usize,
    in_dim: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernel width keeps the sequence length");
        Self {
            lin: Linear::new(store, name, in_dim * kernel, out_dim, rng),
            kernel,
            in_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (t, c) = g.shape(x);
        debug_assert_eq!(c, self.in_dim);
        let pad = self.kernel / 2;
        let z = g.zeros(pad, c);
        let padded = g.concat_rows(&[z, x, z]);
        let taps: Vec<Var> = (0..self.kernel).map(|k| g.slice_rows(padded, k, t)).collect();
        let cols = g.concat_cols(&taps);
        self.lin.forward(g, store, cols)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Embedding {
    table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            table: store.add_glorot(format!("{name}.table"), vocab, dim, rng),
            vocab,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Var {
        let t = g.param(store, self.table);
        g.gather_rows(t, ids)
    }
}

/// LSTM cell; the input projection can be applied to a whole sequence at once.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LstmCell {
    wx: Linear,
    wh: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let wx = Linear::new(store, &format!("{name}.x"), in_dim, 4 * hidden, rng);
        // forget-gate bias starts at 1
        let b = wx.bias_id();
        for j in hidden..2 * hidden {
            store.value_mut(b)[[0, j]] = 1.0;
        }
        Self {
            wx,
            wh: store.add_glorot(format!("{name}.h"), hidden, 4 * hidden, rng),
            hidden,
        }
    }

    pub fn project_input(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.wx.forward(g, store, x)
    }

    /// One step given the already projected input row `xp` (`1 × 4H`).
    pub fn step_projected(&self, g: &mut Graph, store: &ParamStore, xp: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let wh = g.param(store, self.wh);
        let hp = g.matmul(h, wh);
        let z = g.add(xp, hp);
        let i = g.slice_cols(z, 0, hd);
        let f = g.slice_cols(z, hd, hd);
        let gg = g.slice_cols(z, 2 * hd, hd);
        let o = g.slice_cols(z, 3 * hd, hd);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let gg = g.tanh(gg);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let ig = g.mul(i, gg);
        let c2 = g.add(fc, ig);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }

    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> (Var, Var) {
        let xp = self.project_input(g, store, x);
        self.step_projected(g, store, xp, h, c)
    }
}

/// GRU cell with reset gate applied after the hidden projection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GruCell {
    wx: Linear,
    wh: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            wx: Linear::new(store, &format!("{name}.x"), in_dim, 3 * hidden, rng),
            wh: Linear::new(store, &format!("{name}.h"), hidden, 3 * hidden, rng),
            hidden,
        }
    }

    pub fn project_input(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        self.wx.forward(g, store, x)
    }

    pub fn step_projected(&self, g: &mut Graph, store: &ParamStore, xp: Var, h: Var) -> Var {
        let hd = self.hidden;
        let hp = self.wh.forward(g, store, h);
        let xr = g.slice_cols(xp, 0, 2 * hd);
        let hr = g.slice_cols(hp, 0, 2 * hd);
        let rz = g.add(xr, hr);
        let rz = g.sigmoid(rz);
        let r = g.slice_cols(rz, 0, hd);
        let z = g.slice_cols(rz, hd, hd);
        let xn = g.slice_cols(xp, 2 * hd, hd);
        let hn = g.slice_cols(hp, 2 * hd, hd);
        let rhn = g.mul(r, hn);
        let n = g.add(xn, rhn);
        let n = g.tanh(n);
        // h' = n + z * (h - n)
        let d = g.sub(h, n);
        let zd = g.mul(z, d);
        g.add(n, zd)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum RnnKind {
    Lstm,
    Gru,
}

/// Bidirectional recurrent layer mapping `T × in` to `T × 2H`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum BiRnn {
    Lstm { fwd: LstmCell, bwd: LstmCell },
    Gru { fwd: GruCell, bwd: GruCell },
}

impl BiRnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: RnnKind,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        match kind {
            RnnKind::Lstm => BiRnn::Lstm {
                fwd: LstmCell::new(store, &format!("{name}.fwd"), in_dim, hidden, rng),
                bwd: LstmCell::new(store, &format!("{name}.bwd"), in_dim, hidden, rng),
            },
            RnnKind::Gru => BiRnn::Gru {
                fwd: GruCell::new(store, &format!("{name}.fwd"), in_dim, hidden, rng),
                bwd: GruCell::new(store, &format!("{name}.bwd"), in_dim, hidden, rng),
            },
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let t = g.shape(x).0;
        let (fwd, bwd) = match self {
            BiRnn::Lstm { fwd, bwd } => (run_lstm(g, store, fwd, x, t, false), run_lstm(g, store, bwd, x, t, true)),
            BiRnn::Gru { fwd, bwd } => (run_gru(g, store, fwd, x, t, false), run_gru(g, store, bwd, x, t, true)),
        };
        let f = g.concat_rows(&fwd);
        let b = g.concat_rows(&bwd);
        g.concat_cols(&[f, b])
    }
}

fn run_lstm(g: &mut Graph, store: &ParamStore, cell: &LstmCell, x: Var, t: usize, reverse: bool) -> Vec<Var> {
    let xp = cell.project_input(g, store, x);
    let mut h = g.zeros(1, cell.hidden);
    let mut c = h;
    let mut out = vec![h; t];
    let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for i in order {
        let xi = g.slice_rows(xp, i, 1);
        let (h2, c2) = cell.step_projected(g, store, xi, h, c);
        h = h2;
        c = c2;
        out[i] = h;
    }
    out
}

fn run_gru(g: &mut Graph, store: &ParamStore, cell: &GruCell, x: Var, t: usize, reverse: bool) -> Vec<Var> {
    let xp = cell.project_input(g, store, x);
    let mut h = g.zeros(1, cell.hidden);
    let mut out = vec![h; t];
    let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
    for i in order {
        let xi = g.slice_rows(xp, i, 1);
        h = cell.step_projected(g, store, xi, h);
        out[i] = h;
    }
    out
}

/// Sinusoidal positional encodings, `len × dim`.
pub fn positional_encoding(len: usize, dim: usize) -> Mat {
    Mat::from_shape_fn((len, dim), |(pos, i)| {
        let k = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * k / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Multi-head scaled dot-product attention.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(dim.is_multiple_of(heads), "model dim must divide into heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::unbiased(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
            dim,
        }
    }

    /// Returns the output and each head's `Tq × Tk` attention probabilities.
    /// With `causal`, query `i` only sees keys `0..=i`.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        query: Var,
        memory: Var,
        causal: bool,
    ) -> (Var, Vec<Var>) {
        let tq = g.shape(query).0;
        let tk = g.shape(memory).0;
        let dh = self.dim / self.heads;
        let q = self.q.forward(g, store, query);
        let k = self.k.forward(g, store, memory);
        let v = self.v.forward(g, store, memory);
        let mask = causal.then(|| {
            g.constant(Mat::from_shape_fn((tq, tk), |(i, j)| if j > i { -1e9 } else { 0.0 }))
        });
        let mut outs = Vec::with_capacity(self.heads);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let mut scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            if let Some(m) = mask {
                scores = g.add(scores, m);
            }
            let p = g.softmax_rows(scores);
            outs.push(g.matmul(p, vh));
            probs.push(p);
        }
        let cat = g.concat_cols(&outs);
        (self.o.forward(g, store, cat), probs)
    }
}

/// Tacotron-style post-net: five width-5 convolutions, tanh on all but the
/// last, predicting a residual added to the coarse output.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PostNet {
    convs: Vec<Conv1d>,
}

impl PostNet {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, filters: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::with_capacity(5);
        for i in 0..5 {
            let cin = if i == 0 { dim } else { filters };
            let cout = if i == 4 { dim } else { filters };
            convs.push(Conv1d::new(store, &format!("{name}.conv{i}"), cin, cout, 5, rng));
        }
        Self { convs }
    }

    /// Returns `x + postnet(x)`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, store, h);
            if i + 1 < self.convs.len() {
                h = g.tanh(h);
            }
        }
        g.add(x, h)
    }
}
