use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fastspeech::FastSpeechNet;
use super::tacotron::Tacotron2Net;
use super::transformer::TransformerNet;
use crate::decoder::DecoderConfig;
use crate::dsp::{FeatureKind, FeatureTrack};
use crate::error::{Error, Result};
use crate::model_io::{checkpoint_arch, load_checkpoint, save_checkpoint, FeatureNormalizer, TrainReport};
use crate::nn::params::accumulate_grads;
use crate::nn::{seeded_rng, Adam, AdamConfig, Graph, Mat, ParamStore, Var};
use crate::text::{PhonemeSequence, SymbolTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TtsArch {
    Tacotron2,
    Transformer,
    FastSpeech,
}

impl TtsArch {
    pub const ALL: [TtsArch; 3] = [TtsArch::Tacotron2, TtsArch::Transformer, TtsArch::FastSpeech];

    pub fn name(self) -> &'static str {
        match self {
            TtsArch::Tacotron2 => "tacotron2",
            TtsArch::Transformer => "transformer",
            TtsArch::FastSpeech => "fastspeech",
        }
    }

    pub fn checkpoint_tag(self) -> String {
        format!("tts-{}", self.name())
    }
}

impl fmt::Display for TtsArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TtsArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TtsArch::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown TTS architecture {s:?} (tacotron2, transformer, fastspeech)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TtsConfig {
    /// Tacotron2 phoneme embedding width.
    pub embed: usize,
    pub conv_filters: usize,
    /// BiLSTM units per direction.
    pub enc_units: usize,
    pub decoder: DecoderConfig,
    /// Start Tacotron2's attention at the corpus-average phonemes per
    /// decoder step instead of `decoder.init_advance`.
    pub derive_advance: bool,
    /// Transformer and FastSpeech width.
    pub model_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn: usize,
    pub fft_kernel: usize,
    pub dur_filters: usize,
    pub prenet: usize,
    /// Transformer decoder pre-net dropout, applied while training only.
    pub prenet_dropout: f64,
    /// Weight of the diagonal guide on Transformer cross-attention; 0 turns
    /// it off.
    pub guided_attention: f64,
    /// Width of the guide's diagonal band, as a fraction of the lengths.
    pub guided_sigma: f64,
    pub postnet_filters: usize,
    pub max_frames_factor: usize,
    pub stop_threshold: f64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TtsConfig {
    fn default() -> Self {
        Self {
            embed: 64,
            conv_filters: 64,
            enc_units: 32,
            decoder: DecoderConfig::default(),
            derive_advance: true,
            model_dim: 64,
            heads: 2,
            layers: 2,
            ffn: 128,
            fft_kernel: 3,
            dur_filters: 64,
            prenet: 32,
            prenet_dropout: 0.5,
            guided_attention: 1.0,
            guided_sigma: 0.2,
            postnet_filters: 32,
            max_frames_factor: 30,
            stop_threshold: 0.5,
            epochs: 100,
            batch: 1,
            lr: 2e-3,
            seed: 0,
        }
    }
}

impl TtsConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.embed,
            self.conv_filters,
            self.enc_units,
            self.model_dim,
            self.heads,
            self.layers,
            self.ffn,
            self.dur_filters,
            self.prenet,
            self.postnet_filters,
            self.max_frames_factor,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config("TTS layer sizes must be positive".into()));
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("model width {} does not split into {} heads", self.model_dim, self.heads)));
        }
        if self.guided_attention < 0.0 || self.guided_sigma.is_nan() || self.guided_sigma <= 0.0 {
            return Err(Error::Config("guided attention needs a non-negative weight and a positive width".into()));
        }
        if !(0.0..1.0).contains(&self.prenet_dropout) {
            return Err(Error::Config("pre-net dropout must be in [0, 1)".into()));
        }
        if self.fft_kernel.is_multiple_of(2) {
            return Err(Error::Config("feed-forward kernel width must be odd".into()));
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::Config("stop threshold must lie in (0, 1)".into()));
        }
        self.decoder.validate()
    }
}

/// One phoneme sequence with its LPCNet target; FastSpeech also needs
/// per-phoneme frame counts.
#[derive(Clone, Debug)]
pub struct TtsExample {
    pub utterance_id: String,
    pub phonemes: PhonemeSequence,
    pub target: FeatureTrack,
    pub durations: Option<Vec<usize>>,
}

impl TtsExample {
    fn validate(&self, vocab: usize, arch: TtsArch) -> Result<()> {
        self.target.expect_kind(FeatureKind::Lpcnet)?;
        if self.phonemes.is_empty() || self.target.num_frames() == 0 {
            return Err(Error::Data(format!("utterance {}: empty sequence", self.utterance_id)));
        }
        check_ids(&self.phonemes.ids, vocab)?;
        if arch == TtsArch::FastSpeech {
            let d = self
                .durations
                .as_ref()
                .ok_or_else(|| Error::Data(format!("utterance {}: FastSpeech needs durations", self.utterance_id)))?;
            if d.len() != self.phonemes.len() || d.iter().sum::<usize>() != self.target.num_frames() {
                return Err(Error::Data(format!(
                    "utterance {}: {} durations summing to {} for {} phonemes and {} frames",
                    self.utterance_id,
                    d.len(),
                    d.iter().sum::<usize>(),
                    self.phonemes.len(),
                    self.target.num_frames()
                )));
            }
        }
        Ok(())
    }
}

fn check_ids(ids: &[usize], vocab: usize) -> Result<()> {
    match ids.iter().find(|&&i| i >= vocab) {
        Some(i) => Err(Error::Data(format!("phoneme id {i} outside the {vocab}-symbol vocabulary"))),
        None => Ok(()),
    }
}

/// Graph outputs of a teacher-forced pass.
pub struct TeacherForced {
    pub loss: Var,
    /// Final prediction on the normalized scale, `frames × 20`.
    pub output: Var,
    /// Encoder-decoder alignments, `[layer][head]`, each decoder steps × T.
    pub alignments: Vec<Vec<Mat>>,
}

/// Free-running output on the normalized scale.
pub struct Inferred {
    /// Frames before the post-net refinement.
    pub before: Mat,
    pub output: Mat,
    pub truncated: bool,
    pub alignments: Vec<Vec<Mat>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum TtsNet {
    Tacotron2(Tacotron2Net),
    Transformer(TransformerNet),
    FastSpeech(FastSpeechNet),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TtsModel {
    pub arch: TtsArch,
    pub config: TtsConfig,
    pub vocab: usize,
    pub symbol_hash: String,
    pub target_norm: FeatureNormalizer,
    pub frame_shift: f64,
    net: TtsNet,
    params: ParamStore,
    optimizer: Option<Adam>,
    pub epochs_trained: usize,
}

/// Synthesized features of one sentence.
#[derive(Clone, Debug)]
pub struct Synthesized {
    pub features: FeatureTrack,
    pub truncated: bool,
    pub alignments: Vec<Vec<Mat>>,
}

impl TtsModel {
    /// `init_advance` only matters for Tacotron2.
    pub fn new(
        arch: TtsArch,
        config: TtsConfig,
        table: &SymbolTable,
        target_norm: FeatureNormalizer,
        frame_shift: f64,
        init_advance: f64,
    ) -> Result<Self> {
        config.validate()?;
        let vocab = table.len();
        let mut rng = seeded_rng(config.seed);
        let mut params = ParamStore::new();
        let net = match arch {
            TtsArch::Tacotron2 => {
                TtsNet::Tacotron2(Tacotron2Net::new(&mut params, vocab, &config, init_advance, &mut rng)?)
            }
            TtsArch::Transformer => TtsNet::Transformer(TransformerNet::new(&mut params, vocab, &config, &mut rng)),
            TtsArch::FastSpeech => TtsNet::FastSpeech(FastSpeechNet::new(&mut params, vocab, &config, &mut rng)),
        };
        Ok(Self {
            arch,
            config,
            vocab,
            symbol_hash: table.hash(),
            target_norm,
            frame_shift,
            net,
            params,
            optimizer: None,
            epochs_trained: 0,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Teacher-forced graph; `target` is on the normalized scale.
    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        ids: &[usize],
        target: &Mat,
        durations: Option<&[usize]>,
    ) -> Result<TeacherForced> {
        self.teacher_forced_with(g, params, ids, target, durations, None)
    }

    fn teacher_forced_with(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        ids: &[usize],
        target: &Mat,
        durations: Option<&[usize]>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<TeacherForced> {
        Ok(match &self.net {
            TtsNet::Tacotron2(n) => n.teacher_forced(g, params, ids, target),
            TtsNet::Transformer(n) => {
                let dropout = dropout_rng.map(|r| (self.config.prenet_dropout, r));
                n.teacher_forced(g, params, ids, target, dropout)
            }
            TtsNet::FastSpeech(n) => {
                let d = durations.ok_or_else(|| Error::Data("FastSpeech needs durations".into()))?;
                n.teacher_forced(g, params, ids, target, d)
            }
        })
    }

    fn example_graph(&self, g: &mut Graph, params: &ParamStore, ex: &TtsExample) -> Result<TeacherForced> {
        let target = self.target_norm.normalize(ex.target.data());
        self.teacher_forced(g, params, &ex.phonemes.ids, &target, ex.durations.as_deref())
    }

    fn training_graph(&self, g: &mut Graph, ex: &TtsExample, rng: &mut ChaCha8Rng) -> Result<TeacherForced> {
        let target = self.target_norm.normalize(ex.target.data());
        self.teacher_forced_with(g, &self.params, &ex.phonemes.ids, &target, ex.durations.as_deref(), Some(rng))
    }

    /// Teacher-forced (or ground-truth-duration) MSE of the final output on
    /// the normalized feature scale.
    pub fn evaluate(&self, ex: &TtsExample) -> Result<f64> {
        ex.validate(self.vocab, self.arch)?;
        let mut g = Graph::new();
        let tf = self.example_graph(&mut g, &self.params, ex)?;
        let target = self.target_norm.normalize(ex.target.data());
        Ok((g.value(tf.output) - &target).mapv(|d| d * d).mean().unwrap_or(0.0))
    }

    /// Encoder-decoder alignments of a teacher-forced pass.
    pub fn teacher_forced_alignments(&self, ex: &TtsExample) -> Result<Vec<Vec<Mat>>> {
        ex.validate(self.vocab, self.arch)?;
        let mut g = Graph::new();
        Ok(self.example_graph(&mut g, &self.params, ex)?.alignments)
    }

    /// Per-phoneme log-durations from the FastSpeech predictor.
    pub fn predict_log_durations(&self, ids: &[usize]) -> Result<Vec<f64>> {
        check_ids(ids, self.vocab)?;
        match &self.net {
            TtsNet::FastSpeech(n) => Ok(n.predict_log_durations(&self.params, ids)),
            _ => Err(Error::Argument(format!("{} has no duration predictor", self.arch))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.arch.checkpoint_tag(), self)
    }

    /// Loads any TTS checkpoint, refusing one built for another symbol table.
    pub fn load(path: &Path, table: &SymbolTable) -> Result<Self> {
        let tag = checkpoint_arch(path)?;
        if !tag.starts_with("tts-") {
            return Err(Error::Checkpoint(format!("{} holds a {tag} model, not a TTS model", path.display())));
        }
        let m: Self = load_checkpoint(path, &tag)?;
        if m.symbol_hash != table.hash() {
            return Err(Error::Checkpoint(format!(
                "{} was trained with symbol table {} but the current table is {}",
                path.display(),
                &m.symbol_hash[..12.min(m.symbol_hash.len())],
                &table.hash()[..12]
            )));
        }
        Ok(m)
    }
}

/// Options for free-running synthesis.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    /// Frame cap overriding the model's per-phoneme factor.
    pub max_frames: Option<usize>,
    /// FastSpeech only: use these durations instead of predicted ones.
    pub durations: Option<Vec<usize>>,
}

/// Renders features for one phoneme sequence. Autoregressive models stop on
/// their stop token or at the frame cap; FastSpeech runs in a single pass.
pub fn synthesize(model: &TtsModel, phonemes: &PhonemeSequence, opts: &SynthesisOptions) -> Result<Synthesized> {
    if phonemes.is_empty() {
        return Err(Error::EmptyInput("empty phoneme sequence".into()));
    }
    check_ids(&phonemes.ids, model.vocab)?;
    let ids = &phonemes.ids;
    let out = match &model.net {
        TtsNet::Tacotron2(n) => n.infer(&model.params, ids, opts.max_frames)?,
        TtsNet::Transformer(n) => n.infer(&model.params, ids, opts.max_frames)?,
        TtsNet::FastSpeech(n) => n.infer(&model.params, ids, opts.durations.as_deref())?,
    };
    Ok(Synthesized {
        features: FeatureTrack::new(model.target_norm.denormalize(&out.output), model.frame_shift, FeatureKind::Lpcnet)?,
        truncated: out.truncated,
        alignments: out.alignments,
    })
}

/// Trains a new model, or continues `resume` (which fixes the architecture,
/// normalizer and optimizer state), for `config.epochs` epochs.
pub fn train_tts(
    arch: TtsArch,
    dataset: &[TtsExample],
    config: &TtsConfig,
    table: &SymbolTable,
    resume: Option<TtsModel>,
) -> Result<(TtsModel, TrainReport)> {
    let first = dataset.first().ok_or_else(|| Error::Data("empty TTS training set".into()))?;
    let mut model = match resume {
        Some(m) => {
            if m.arch != arch {
                return Err(Error::Checkpoint(format!("cannot continue a {} model as {arch}", m.arch)));
            }
            if m.symbol_hash != table.hash() {
                return Err(Error::Checkpoint("model was trained with a different symbol table".into()));
            }
            m
        }
        None => {
            let norm = FeatureNormalizer::fit(dataset.iter().map(|e| e.target.data()))?;
            let r = config.decoder.reduction.max(1);
            let advance = if config.derive_advance {
                let phones: usize = dataset.iter().map(|e| e.phonemes.len()).sum();
                let steps: usize = dataset.iter().map(|e| e.target.num_frames().div_ceil(r)).sum();
                phones as f64 / steps.max(1) as f64
            } else {
                config.decoder.init_advance
            };
            TtsModel::new(arch, config.clone(), table, norm, first.target.frame_shift(), advance)?
        }
    };
    for ex in dataset {
        ex.validate(model.vocab, arch)?;
    }
    let (batch, seed) = (model.config.batch.max(1), model.config.seed);
    let mut adam = model
        .optimizer
        .take()
        .unwrap_or_else(|| Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &model.params));
    adam.config.lr = config.lr;
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        let mut rng = seeded_rng(seed ^ (model.epochs_trained as u64).wrapping_mul(0x9e37_79b9));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut acc = HashMap::new();
            for &i in chunk {
                let mut g = Graph::new();
                let tf = model.training_graph(&mut g, &dataset[i], &mut rng)?;
                total += g.scalar(tf.loss);
                accumulate_grads(&mut acc, g.backward(tf.loss));
            }
            adam.update(&mut model.params, &acc, chunk.len());
            report.steps += 1;
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("{arch} training loss diverged")));
        }
        log::debug!("{arch} epoch {} loss {mean:.4}", model.epochs_trained);
        report.epoch_losses.push(mean);
        model.epochs_trained += 1;
    }
    model.optimizer = Some(adam);
    Ok((model, report))
}
