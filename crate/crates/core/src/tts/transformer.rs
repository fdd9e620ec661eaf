//! Transformer TTS: a self-attention encoder over phonemes and a causal
//! decoder emitting one LPCNet frame per step, with stop prediction and a
//! post-net.

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{head_matrices, DecoderBlock, FftBlock, ScaledPositions};
use super::model::{Inferred, TeacherForced, TtsConfig};
use crate::decoder::pad_targets;
use crate::dsp::LPCNET_DIM;
use crate::error::{Error, Result};
use crate::nn::graph::sigmoid;
use crate::nn::{Conv1d, Embedding, Graph, Linear, Mat, ParamStore, PostNet, Var};

/// Penalty that is zero on the diagonal of a `frames × phones` alignment
/// and grows towards 1 away from it.
fn guide_penalty(frames: usize, phones: usize, sigma: f64) -> Mat {
    Array2::from_shape_fn((frames, phones), |(t, j)| {
        let d = j as f64 / phones as f64 - t as f64 / frames as f64;
        1.0 - (-d * d / (2.0 * sigma * sigma)).exp()
    })
}

/// Inverted dropout: zeroes units with probability `rate` and rescales the
/// rest so the expectation is unchanged.
fn drop_units(g: &mut Graph, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Var {
    if rate <= 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - rate);
    let (r, c) = g.value(x).dim();
    let mask = Array2::from_shape_fn((r, c), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep });
    let m = g.constant(mask);
    g.mul(x, m)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransformerNet {
    embedding: Embedding,
    enc_prenet: Conv1d,
    enc_proj: Linear,
    enc_pos: ScaledPositions,
    encoder: Vec<FftBlock>,
    dec_prenet1: Linear,
    dec_prenet2: Linear,
    dec_proj: Linear,
    dec_pos: ScaledPositions,
    decoder: Vec<DecoderBlock>,
    feat: Linear,
    stop: Linear,
    postnet: PostNet,
    max_frames_factor: usize,
    stop_threshold: f64,
    #[serde(default)]
    guide: (f64, f64),
}

impl TransformerNet {
    pub fn new(store: &mut ParamStore, vocab: usize, cfg: &TtsConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_dim;
        Self {
            embedding: Embedding::new(store, "embed", vocab, d, rng),
            enc_prenet: Conv1d::new(store, "enc.prenet", d, d, 5, rng),
            enc_proj: Linear::new(store, "enc.proj", d, d, rng),
            enc_pos: ScaledPositions::new(store, "enc.pos", d),
            encoder: (0..cfg.layers)
                .map(|i| FftBlock::new(store, &format!("enc.block{i}"), d, cfg.heads, cfg.ffn, 1, rng))
                .collect(),
            dec_prenet1: Linear::new(store, "dec.prenet1", LPCNET_DIM, cfg.prenet, rng),
            dec_prenet2: Linear::new(store, "dec.prenet2", cfg.prenet, cfg.prenet, rng),
            dec_proj: Linear::new(store, "dec.proj", cfg.prenet, d, rng),
            dec_pos: ScaledPositions::new(store, "dec.pos", d),
            decoder: (0..cfg.layers)
                .map(|i| DecoderBlock::new(store, &format!("dec.block{i}"), d, cfg.heads, cfg.ffn, rng))
                .collect(),
            feat: Linear::new(store, "dec.feat", d, LPCNET_DIM, rng),
            stop: Linear::new(store, "dec.stop", d, 1, rng),
            postnet: PostNet::new(store, "postnet", LPCNET_DIM, cfg.postnet_filters, rng),
            max_frames_factor: cfg.max_frames_factor,
            stop_threshold: cfg.stop_threshold,
            guide: (cfg.guided_attention, cfg.guided_sigma),
        }
    }

    fn encode(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Var {
        let e = self.embedding.forward(g, store, ids);
        let h = self.enc_prenet.forward(g, store, e);
        let h = g.relu(h);
        let h = self.enc_proj.forward(g, store, h);
        let mut x = self.enc_pos.add(g, store, h, 0);
        for b in &self.encoder {
            x = b.forward(g, store, x);
        }
        x
    }

    /// Pre-net and positions for decoder inputs starting at frame `offset`.
    /// With `dropout`, each pre-net layer output is masked at that rate.
    fn dec_input(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: Var,
        offset: usize,
        mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Var {
        let mut p = frames;
        for layer in [&self.dec_prenet1, &self.dec_prenet2] {
            let h = layer.forward(g, store, p);
            p = g.relu(h);
            if let Some((rate, rng)) = dropout.as_mut() {
                p = drop_units(g, p, *rate, rng);
            }
        }
        let p = self.dec_proj.forward(g, store, p);
        self.dec_pos.add(g, store, p, offset)
    }

    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[usize],
        target: &Mat,
        dropout: Option<(f64, &mut ChaCha8Rng)>,
    ) -> TeacherForced {
        let n = target.nrows();
        let memory = self.encode(g, store, ids);
        // inputs are the targets shifted right behind a zero go frame
        let shifted = concatenate![Axis(0), Array2::zeros((1, LPCNET_DIM)), target.slice(ndarray::s![..n - 1, ..])];
        let frames = g.constant(shifted);
        let mut y = self.dec_input(g, store, frames, 0, dropout);
        let mut alignments = Vec::with_capacity(self.decoder.len());
        let mut guided = Vec::new();
        let (weight, sigma) = self.guide;
        let band = (weight > 0.0).then(|| g.constant(guide_penalty(n, ids.len(), sigma)));
        for b in &self.decoder {
            let (out, probs) = b.forward(g, store, y, None, memory);
            alignments.push(head_matrices(g, &probs));
            if let Some(w) = band {
                for p in probs {
                    let m = g.mul(p, w);
                    guided.push(g.mean(m));
                }
            }
            y = out;
        }
        let before = self.feat.forward(g, store, y);
        let stop_logits = self.stop.forward(g, store, y);
        let after = self.postnet.forward(g, store, before);
        let tgt = g.constant(target.clone());
        let (_, stops) = pad_targets(target, 1);
        let l1 = g.mse(before, tgt);
        let l2 = g.mse(after, tgt);
        let l3 = g.bce_with_logits(stop_logits, stops);
        let l = g.add(l1, l2);
        let mut loss = g.add(l, l3);
        if !guided.is_empty() {
            let k = weight / guided.len() as f64;
            for v in guided {
                let v = g.scale(v, k);
                loss = g.add(loss, v);
            }
        }
        TeacherForced { loss, output: after, alignments }
    }

    /// Autoregressive decoding one frame at a time, caching each block's
    /// inputs as the self-attention keys.
    pub fn infer(&self, store: &ParamStore, ids: &[usize], max_frames: Option<usize>) -> Result<Inferred> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("empty phoneme sequence".into()));
        }
        let cap = max_frames.unwrap_or(self.max_frames_factor * ids.len()).max(1);
        let mut g = Graph::new();
        let mem = self.encode(&mut g, store, ids);
        let memory = g.value(mem).clone();
        let d = memory.ncols();
        let mut history: Vec<Mat> = vec![Mat::zeros((0, d)); self.decoder.len()];
        let mut cross: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.decoder.len() * self.decoder[0].heads()];
        let mut frames: Vec<Mat> = Vec::new();
        let mut prev = Mat::zeros((1, LPCNET_DIM));
        let mut truncated = true;
        while frames.len() < cap {
            let mut g = Graph::new();
            let mem = g.constant(memory.clone());
            let pv = g.constant(prev.clone());
            let mut y = self.dec_input(&mut g, store, pv, frames.len(), None);
            for (l, b) in self.decoder.iter().enumerate() {
                history[l] = concatenate![Axis(0), history[l], g.value(y).clone()];
                let h = g.constant(history[l].clone());
                let (out, probs) = b.forward(&mut g, store, y, Some(h), mem);
                for (k, p) in probs.iter().enumerate() {
                    cross[l * probs.len() + k].push(g.value(*p).row(0).to_vec());
                }
                y = out;
            }
            let f = self.feat.forward(&mut g, store, y);
            let s = self.stop.forward(&mut g, store, y);
            let frame = g.value(f).clone();
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("decoder produced non-finite frames".into()));
            }
            let stop = sigmoid(g.value(s)[[0, 0]]);
            frames.push(frame.clone());
            prev = frame;
            if stop > self.stop_threshold {
                truncated = false;
                break;
            }
        }
        if truncated {
            log::warn!("decoding stopped at the {cap}-frame cap without a stop decision");
        }
        let mut g = Graph::new();
        let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
        let before = g.constant(concatenate(Axis(0), &views).expect("frames share width"));
        let after = self.postnet.forward(&mut g, store, before);
        let heads = self.decoder[0].heads();
        let t = memory.nrows();
        let alignments = (0..self.decoder.len())
            .map(|l| {
                (0..heads)
                    .map(|k| {
                        let rows = &cross[l * heads + k];
                        Array2::from_shape_fn((rows.len(), t), |(i, j)| rows[i][j])
                    })
                    .collect()
            })
            .collect();
        Ok(Inferred { before: g.value(before).clone(), output: g.value(after).clone(), truncated, alignments })
    }
}
