//! Tacotron2 over phonemes: embedding, three convolutions and a BiLSTM
//! encoder feeding the GMM-attention decoder.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Inferred, TeacherForced, TtsConfig};
use crate::decoder::{alignment_matrix, pad_targets, seq2seq_loss, AttnDecoder};
use crate::dsp::LPCNET_DIM;
use crate::error::Result;
use crate::nn::{BiRnn, Conv1d, Embedding, Graph, Mat, ParamStore, RnnKind, Var};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tacotron2Net {
    embedding: Embedding,
    convs: Vec<Conv1d>,
    blstm: BiRnn,
    decoder: AttnDecoder,
}

impl Tacotron2Net {
    pub fn new(
        store: &mut ParamStore,
        vocab: usize,
        cfg: &TtsConfig,
        init_advance: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let embedding = Embedding::new(store, "embed", vocab, cfg.embed, rng);
        let convs = (0..3)
            .map(|i| {
                let din = if i == 0 { cfg.embed } else { cfg.conv_filters };
                Conv1d::new(store, &format!("enc.conv{i}"), din, cfg.conv_filters, 5, rng)
            })
            .collect();
        let blstm = BiRnn::new(store, "enc.blstm", RnnKind::Lstm, cfg.conv_filters, cfg.enc_units, rng);
        let mut dcfg = cfg.decoder.clone();
        dcfg.init_advance = init_advance;
        let decoder = AttnDecoder::new(store, "dec", 2 * cfg.enc_units, LPCNET_DIM, dcfg, rng)?;
        Ok(Self { embedding, convs, blstm, decoder })
    }

    pub fn reduction(&self) -> usize {
        self.decoder.config.reduction
    }

    fn encode(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Var {
        let mut h = self.embedding.forward(g, store, ids);
        for conv in &self.convs {
            let c = conv.forward(g, store, h);
            h = g.relu(c);
        }
        self.blstm.forward(g, store, h)
    }

    pub fn teacher_forced(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], target: &Mat) -> TeacherForced {
        let memory = self.encode(g, store, ids);
        let (padded, stops) = pad_targets(target, self.reduction());
        let out = self.decoder.teacher_forced(g, store, memory, &padded);
        let loss = seq2seq_loss(g, &out, target, stops);
        let output = g.slice_rows(out.after, 0, target.nrows());
        TeacherForced { loss, output, alignments: vec![vec![alignment_matrix(g, &out.alignment)]] }
    }

    pub fn infer(&self, store: &ParamStore, ids: &[usize], max_frames: Option<usize>) -> Result<Inferred> {
        let mut g = Graph::new();
        let mem = self.encode(&mut g, store, ids);
        let memory = g.value(mem).clone();
        let dec = self.decoder.infer(store, &memory, max_frames)?;
        Ok(Inferred { before: dec.before, output: dec.after, truncated: dec.truncated, alignments: vec![vec![dec.alignment]] })
    }
}
