//! FastSpeech: feed-forward transformer encoder, log-duration predictor,
//! length regulator and feed-forward decoder. Non-autoregressive.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{FftBlock, ScaledPositions};
use super::duration::{expand_indices, round_preserving_total};
use super::model::{Inferred, TeacherForced, TtsConfig};
use crate::dsp::LPCNET_DIM;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Embedding, Graph, LayerNorm, Linear, Mat, ParamStore, Var};

/// Floor applied before taking the log of a target duration, so that
/// zero-frame phonemes get a finite regression target.
pub const MIN_LOG_DURATION_FRAMES: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DurationPredictor {
    conv1: Conv1d,
    ln1: LayerNorm,
    conv2: Conv1d,
    ln2: LayerNorm,
    out: Linear,
}

impl DurationPredictor {
    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.conv1.forward(g, store, x);
        let h = g.relu(h);
        let h = self.ln1.forward(g, store, h);
        let h = self.conv2.forward(g, store, h);
        let h = g.relu(h);
        let h = self.ln2.forward(g, store, h);
        self.out.forward(g, store, h)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FastSpeechNet {
    embedding: Embedding,
    enc_pos: ScaledPositions,
    encoder: Vec<FftBlock>,
    predictor: DurationPredictor,
    dec_pos: ScaledPositions,
    decoder: Vec<FftBlock>,
    feat: Linear,
}

/// Integer frame counts from predicted log-durations, total preserved.
pub fn durations_from_log(log_d: &[f64]) -> Vec<usize> {
    let d: Vec<f64> = log_d.iter().map(|x| x.exp()).collect();
    round_preserving_total(&d)
}

impl FastSpeechNet {
    pub fn new(store: &mut ParamStore, vocab: usize, cfg: &TtsConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.model_dim;
        let k = cfg.fft_kernel;
        let block = |store: &mut ParamStore, name: String, rng: &mut ChaCha8Rng| {
            FftBlock::new(store, &name, d, cfg.heads, cfg.ffn, k, rng)
        };
        let embedding = Embedding::new(store, "embed", vocab, d, rng);
        let enc_pos = ScaledPositions::new(store, "enc.pos", d);
        let encoder = (0..cfg.layers).map(|i| block(store, format!("enc.block{i}"), rng)).collect();
        let predictor = DurationPredictor {
            conv1: Conv1d::new(store, "dur.conv1", d, cfg.dur_filters, k, rng),
            ln1: LayerNorm::new(store, "dur.ln1", cfg.dur_filters),
            conv2: Conv1d::new(store, "dur.conv2", cfg.dur_filters, cfg.dur_filters, k, rng),
            ln2: LayerNorm::new(store, "dur.ln2", cfg.dur_filters),
            out: Linear::new(store, "dur.out", cfg.dur_filters, 1, rng),
        };
        let dec_pos = ScaledPositions::new(store, "dec.pos", d);
        let decoder = (0..cfg.layers).map(|i| block(store, format!("dec.block{i}"), rng)).collect();
        let feat = Linear::new(store, "feat", d, LPCNET_DIM, rng);
        Self { embedding, enc_pos, encoder, predictor, dec_pos, decoder, feat }
    }

    /// Encoder output and predicted log-durations (`T × 1`).
    fn encode(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> (Var, Var) {
        let e = self.embedding.forward(g, store, ids);
        let mut x = self.enc_pos.add(g, store, e, 0);
        for b in &self.encoder {
            x = b.forward(g, store, x);
        }
        let log_d = self.predictor.forward(g, store, x);
        (x, log_d)
    }

    fn decode(&self, g: &mut Graph, store: &ParamStore, enc: Var, durations: &[usize]) -> Var {
        let regulated = g.gather_rows(enc, &expand_indices(durations));
        let mut y = self.dec_pos.add(g, store, regulated, 0);
        for b in &self.decoder {
            y = b.forward(g, store, y);
        }
        self.feat.forward(g, store, y)
    }

    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[usize],
        target: &Mat,
        durations: &[usize],
    ) -> TeacherForced {
        let (enc, log_d) = self.encode(g, store, ids);
        let out = self.decode(g, store, enc, durations);
        let tgt = g.constant(target.clone());
        let l_feat = g.mse(out, tgt);
        let dt = Mat::from_shape_fn((durations.len(), 1), |(i, _)| (durations[i] as f64).max(MIN_LOG_DURATION_FRAMES).ln());
        let dt = g.constant(dt);
        let l_dur = g.mse(log_d, dt);
        let loss = g.add(l_feat, l_dur);
        TeacherForced { loss, output: out, alignments: Vec::new() }
    }

    pub fn predict_log_durations(&self, store: &ParamStore, ids: &[usize]) -> Vec<f64> {
        let mut g = Graph::new();
        let (_, log_d) = self.encode(&mut g, store, ids);
        g.value(log_d).column(0).to_vec()
    }

    /// Single pass with durations from the predictor, or `durations` when
    /// given.
    pub fn infer(&self, store: &ParamStore, ids: &[usize], durations: Option<&[usize]>) -> Result<Inferred> {
        if ids.is_empty() {
            return Err(Error::EmptyInput("empty phoneme sequence".into()));
        }
        let mut g = Graph::new();
        let (enc, log_d) = self.encode(&mut g, store, ids);
        let mut d = match durations {
            Some(d) => d.to_vec(),
            None => durations_from_log(g.value(log_d).column(0).as_slice().expect("column of a T x 1 matrix")),
        };
        if d.len() != ids.len() {
            return Err(Error::Data(format!("{} durations for {} phonemes", d.len(), ids.len())));
        }
        if d.iter().sum::<usize>() == 0 {
            // an utterance never renders to nothing; give the longest
            // predicted phoneme one frame
            let lv = g.value(log_d).column(0).to_vec();
            d[crate::attention::argmax(lv.into_iter())] = 1;
        }
        let out = self.decode(&mut g, store, enc, &d);
        let output = g.value(out).clone();
        Ok(Inferred { before: output.clone(), output, truncated: false, alignments: Vec::new() })
    }
}
