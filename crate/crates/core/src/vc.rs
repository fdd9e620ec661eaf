//! Tacotron2-style voice conversion synthesizer: downsampled PPGs plus
//! normalized log-F0 to LPCNet features of one target speaker.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attention::attention_alignment;
use crate::decoder::{alignment_matrix, pad_targets, seq2seq_loss, AttnDecoder, DecoderConfig, DecoderOutputs};
use crate::dsp::f0::downsample_normalized_logf0;
use crate::dsp::{extract_logf0, extract_mfcc, AudioClip, F0Stats, FeatureConfig, FeatureKind, FeatureTrack, LPCNET_DIM};
use crate::error::{Error, Result};
use crate::model_io::{load_checkpoint, save_checkpoint, FeatureNormalizer, TrainReport};
use crate::nn::params::accumulate_grads;
use crate::nn::{seeded_rng, Adam, AdamConfig, BiRnn, Conv1d, Graph, LayerNorm, Linear, ParamStore, RnnKind, Var};
use crate::ppg::{downsample_ppg, extract_ppg, PpgModel};

pub const ARCH: &str = "tacotron2-vc";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VcConfig {
    pub ppg_dim: usize,
    pub embed: usize,
    pub conv_filters: usize,
    pub enc_units: usize,
    pub decoder: DecoderConfig,
    /// PPG/F0 pooling factor applied before the encoder.
    pub downsample: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for VcConfig {
    fn default() -> Self {
        Self {
            ppg_dim: 488,
            embed: 32,
            conv_filters: 32,
            enc_units: 32,
            decoder: DecoderConfig::default(),
            downsample: 2,
            epochs: 150,
            batch: 1,
            lr: 2e-3,
            seed: 0,
        }
    }
}

impl VcConfig {
    pub fn full_scale(ppg_dim: usize) -> Self {
        Self {
            ppg_dim,
            embed: 512,
            conv_filters: 512,
            enc_units: 256,
            decoder: DecoderConfig { prenet: 256, rnn: 1024, postnet_filters: 512, ..DecoderConfig::default() },
            ..Self::default()
        }
    }
}

/// One training pair, already pooled to encoder rate.
#[derive(Clone, Debug)]
pub struct VcExample {
    pub utterance_id: String,
    pub speaker_id: String,
    /// Downsampled posteriorgram, `T × S`.
    pub ppg: FeatureTrack,
    /// Normalized, downsampled log-F0 of length `T`.
    pub logf0: Vec<f64>,
    /// Raw LPCNet features at the analysis hop.
    pub target: FeatureTrack,
}

impl VcExample {
    pub fn validate(&self) -> Result<()> {
        self.ppg.expect_kind(FeatureKind::Ppg)?;
        self.target.expect_kind(FeatureKind::Lpcnet)?;
        if self.logf0.len() != self.ppg.num_frames() {
            return Err(Error::Data(format!(
                "utterance {}: {} PPG frames but {} log-F0 values",
                self.utterance_id,
                self.ppg.num_frames(),
                self.logf0.len()
            )));
        }
        if self.ppg.num_frames() == 0 || self.target.num_frames() == 0 {
            return Err(Error::Data(format!("utterance {}: empty sequence", self.utterance_id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VcModel {
    pub config: VcConfig,
    pub speaker_id: String,
    pub target_norm: FeatureNormalizer,
    ppg_linear: Linear,
    ppg_norm: LayerNorm,
    convs: Vec<Conv1d>,
    blstm: BiRnn,
    decoder: AttnDecoder,
    params: ParamStore,
    optimizer: Option<Adam>,
    pub epochs_trained: usize,
}

/// Output of [`vc_forward`].
#[derive(Clone, Debug)]
pub struct VcOutput {
    /// Denormalized post-net features.
    pub features: FeatureTrack,
    pub stop_logits: Vec<f64>,
    /// Decoder steps × encoder positions.
    pub alignment: Array2<f64>,
    pub truncated: bool,
}

impl VcModel {
    pub fn new(config: VcConfig, speaker_id: &str, target_norm: FeatureNormalizer) -> Result<Self> {
        if config.ppg_dim == 0 || config.embed == 0 || config.conv_filters == 0 || config.enc_units == 0 {
            return Err(Error::Config("VC layer sizes must be positive".into()));
        }
        if config.downsample == 0 {
            return Err(Error::Config("downsampling factor must be >= 1".into()));
        }
        if target_norm.dim() != LPCNET_DIM {
            return Err(Error::Config("target normalizer must be 20-dimensional".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let mut params = ParamStore::new();
        let ppg_linear = Linear::new(&mut params, "ppg_linear", config.ppg_dim, config.embed, &mut rng);
        let ppg_norm = LayerNorm::new(&mut params, "ppg_norm", config.embed);
        let mut convs = Vec::new();
        for i in 0..3 {
            let din = if i == 0 { config.embed } else { config.conv_filters };
            convs.push(Conv1d::new(&mut params, &format!("enc.conv{i}"), din, config.conv_filters, 5, &mut rng));
        }
        let blstm = BiRnn::new(&mut params, "enc.blstm", RnnKind::Lstm, config.conv_filters, config.enc_units, &mut rng);
        let mut dcfg = config.decoder.clone();
        // one encoder position spans `downsample` frames, one step `reduction`
        dcfg.init_advance = dcfg.reduction as f64 / config.downsample as f64;
        let decoder = AttnDecoder::new(&mut params, "dec", 2 * config.enc_units + 1, LPCNET_DIM, dcfg, &mut rng)?;
        Ok(Self {
            config,
            speaker_id: speaker_id.to_string(),
            target_norm,
            ppg_linear,
            ppg_norm,
            convs,
            blstm,
            decoder,
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

    pub fn decoder(&self) -> &AttnDecoder {
        &self.decoder
    }

    /// Encoder output with the log-F0 column appended: `T × (2U + 1)`.
    pub fn memory(&self, g: &mut Graph, params: &ParamStore, ppg: &Array2<f64>, logf0: &[f64]) -> Var {
        let x = g.constant(ppg.clone());
        let h = self.ppg_linear.forward(g, params, x);
        let h = self.ppg_norm.forward(g, params, h);
        let mut h = g.relu(h);
        for conv in &self.convs {
            let c = conv.forward(g, params, h);
            h = g.relu(c);
        }
        let enc = self.blstm.forward(g, params, h);
        let f0 = g.constant(Array2::from_shape_vec((logf0.len(), 1), logf0.to_vec()).expect("column"));
        g.concat_cols(&[enc, f0])
    }

    fn check_inputs(&self, ppg: &FeatureTrack, logf0: &[f64]) -> Result<()> {
        ppg.expect_kind(FeatureKind::Ppg)?;
        if ppg.dim() != self.config.ppg_dim {
            return Err(Error::Type(format!("PPG dimension {} but the model expects {}", ppg.dim(), self.config.ppg_dim)));
        }
        if logf0.len() != ppg.num_frames() {
            return Err(Error::Data(format!("{} PPG frames but {} log-F0 values", ppg.num_frames(), logf0.len())));
        }
        if ppg.num_frames() == 0 {
            return Err(Error::EmptyInput("empty PPG sequence".into()));
        }
        Ok(())
    }

    /// Teacher-forced graph and its loss on normalized targets.
    pub fn loss_graph(&self, g: &mut Graph, params: &ParamStore, ex: &VcExample) -> (DecoderOutputs, Var) {
        let memory = self.memory(g, params, ex.ppg.data(), &ex.logf0);
        let target = self.target_norm.normalize(ex.target.data());
        let (padded, stops) = pad_targets(&target, self.decoder.config.reduction);
        let out = self.decoder.teacher_forced(g, params, memory, &padded);
        let loss = seq2seq_loss(g, &out, &target, stops);
        (out, loss)
    }

    /// Teacher-forced post-net MSE on the normalized scale and diagonality.
    pub fn evaluate(&self, ex: &VcExample) -> Result<(f64, f64)> {
        ex.validate()?;
        let mut g = Graph::new();
        let (out, _) = self.loss_graph(&mut g, &self.params, ex);
        let target = self.target_norm.normalize(ex.target.data());
        let n = target.nrows();
        let pred = g.value(out.after).slice(ndarray::s![..n, ..]).to_owned();
        let mse = (&pred - &target).mapv(|d| d * d).mean().unwrap_or(0.0);
        let diag = attention_alignment(&alignment_matrix(&g, &out.alignment))?;
        Ok((mse, diag))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, ARCH, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_checkpoint(path, ARCH)
    }
}

/// Runs the synthesizer teacher-forced (with targets) or free-running.
pub fn vc_forward(model: &VcModel, ppg: &FeatureTrack, logf0: &[f64], teacher: Option<&FeatureTrack>) -> Result<VcOutput> {
    model.check_inputs(ppg, logf0)?;
    let shift = ppg.frame_shift() / model.config.downsample as f64;
    match teacher {
        Some(t) => {
            t.expect_kind(FeatureKind::Lpcnet)?;
            let ex = VcExample {
                utterance_id: String::new(),
                speaker_id: model.speaker_id.clone(),
                ppg: ppg.clone(),
                logf0: logf0.to_vec(),
                target: t.clone(),
            };
            let mut g = Graph::new();
            let (out, _) = model.loss_graph(&mut g, &model.params, &ex);
            let n = t.num_frames();
            let after = g.value(out.after).slice(ndarray::s![..n, ..]).to_owned();
            let stop = g.value(out.stop_logits).column(0).iter().take(n).copied().collect();
            Ok(VcOutput {
                features: FeatureTrack::new(model.target_norm.denormalize(&after), t.frame_shift(), FeatureKind::Lpcnet)?,
                stop_logits: stop,
                alignment: alignment_matrix(&g, &out.alignment),
                truncated: false,
            })
        }
        None => {
            let mut g = Graph::new();
            let mem = model.memory(&mut g, &model.params, ppg.data(), logf0);
            let memory = g.value(mem).clone();
            let dec = model.decoder.infer(&model.params, &memory, None)?;
            Ok(VcOutput {
                features: FeatureTrack::new(model.target_norm.denormalize(&dec.after), shift, FeatureKind::Lpcnet)?,
                stop_logits: dec.stop_logits,
                alignment: dec.alignment,
                truncated: dec.truncated,
            })
        }
    }
}

fn check_dataset(dataset: &[VcExample], speaker: Option<&str>) -> Result<()> {
    let first = dataset.first().ok_or_else(|| Error::Data("empty VC training set".into()))?;
    let speaker = speaker.unwrap_or(&first.speaker_id);
    for ex in dataset {
        ex.validate()?;
        if ex.speaker_id != speaker {
            return Err(Error::Data(format!(
                "utterance {} belongs to speaker {}, not {speaker}; a VC model serves one target speaker",
                ex.utterance_id, ex.speaker_id
            )));
        }
    }
    Ok(())
}

/// Trains a new model (or continues `resume`) for `config.epochs` epochs.
pub fn train_vc(dataset: &[VcExample], config: &VcConfig, resume: Option<VcModel>) -> Result<(VcModel, TrainReport)> {
    let mut model = match resume {
        Some(m) => {
            check_dataset(dataset, Some(&m.speaker_id))?;
            m
        }
        None => {
            check_dataset(dataset, None)?;
            let norm = FeatureNormalizer::fit(dataset.iter().map(|e| e.target.data()))?;
            VcModel::new(config.clone(), &dataset[0].speaker_id, norm)?
        }
    };
    let cfg = &model.config;
    for ex in dataset {
        model.check_inputs(&ex.ppg, &ex.logf0)?;
    }
    let (lr, batch, seed) = (config.lr, cfg.batch.max(1), cfg.seed);
    let mut adam = model
        .optimizer
        .take()
        .unwrap_or_else(|| Adam::new(AdamConfig { lr, ..AdamConfig::default() }, &model.params));
    adam.config.lr = lr;
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        // per-epoch shuffle seeded by the absolute epoch index, so resuming
        // reproduces an uninterrupted run
        let mut rng = seeded_rng(seed ^ (model.epochs_trained as u64).wrapping_mul(0x9e37_79b9));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let mut acc = HashMap::new();
            for &i in chunk {
                let mut g = Graph::new();
                let (_, loss) = model.loss_graph(&mut g, &model.params, &dataset[i]);
                total += g.scalar(loss);
                accumulate_grads(&mut acc, g.backward(loss));
            }
            adam.update(&mut model.params, &acc, chunk.len());
            report.steps += 1;
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric("VC training loss diverged".into()));
        }
        log::debug!("vc epoch {} loss {mean:.4}", model.epochs_trained);
        report.epoch_losses.push(mean);
        model.epochs_trained += 1;
    }
    model.optimizer = Some(adam);
    Ok((model, report))
}

/// Builds the encoder inputs for one utterance: MFCC to PPG to pooled PPG,
/// and log-F0 normalized with `f0_stats` then pooled.
pub fn conversion_inputs(
    clip: &AudioClip,
    ppg_model: &PpgModel,
    f0_stats: &F0Stats,
    downsample: usize,
    feature_cfg: &FeatureConfig,
) -> Result<(FeatureTrack, Vec<f64>)> {
    let mfcc = extract_mfcc(clip, feature_cfg)?;
    let ppg = downsample_ppg(&extract_ppg(ppg_model, &mfcc)?, downsample)?;
    let lf0 = extract_logf0(clip, feature_cfg)?;
    let f0 = downsample_normalized_logf0(&lf0, f0_stats, downsample)?;
    Ok((ppg, f0))
}

/// Converted features of a source utterance in the VC model's voice.
#[derive(Clone, Debug)]
pub struct Converted {
    pub features: FeatureTrack,
    pub speaker_id: String,
    pub truncated: bool,
}

/// Converts `source` into the target voice of `vc_model`. F0 is normalized
/// with the source speaker's statistics.
pub fn convert(
    source: &AudioClip,
    ppg_model: &PpgModel,
    vc_model: &VcModel,
    f0_stats_source: &F0Stats,
    feature_cfg: &FeatureConfig,
) -> Result<Converted> {
    let (ppg, f0) = conversion_inputs(source, ppg_model, f0_stats_source, vc_model.config.downsample, feature_cfg)?;
    let out = vc_forward(vc_model, &ppg, &f0, None)?;
    Ok(Converted { features: out.features, speaker_id: vc_model.speaker_id.clone(), truncated: out.truncated })
}

/// Mean of each column of a matrix.
pub fn column_means(x: &Array2<f64>) -> Vec<f64> {
    x.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_gradients;
    use rand::Rng;

    fn toy_config(ppg_dim: usize) -> VcConfig {
        VcConfig {
            ppg_dim,
            embed: 4,
            conv_filters: 3,
            enc_units: 2,
            decoder: DecoderConfig { prenet: 3, rnn: 3, mixtures: 2, postnet_filters: 3, ..DecoderConfig::default() },
            epochs: 1,
            seed: 4,
            ..VcConfig::default()
        }
    }

    fn example(rng: &mut rand_chacha::ChaCha8Rng, t: usize, frames: usize, s: usize, speaker: &str) -> VcExample {
        let mut ppg = Array2::from_shape_fn((t, s), |_| rng.gen_range(0.0..1.0));
        for mut row in ppg.rows_mut() {
            let sum = row.sum();
            row /= sum;
        }
        VcExample {
            utterance_id: format!("u{t}_{frames}"),
            speaker_id: speaker.into(),
            ppg: FeatureTrack::new(ppg, 0.02, FeatureKind::Ppg).unwrap(),
            logf0: (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            target: FeatureTrack::new(
                Array2::from_shape_fn((frames, LPCNET_DIM), |_| rng.gen_range(-1.0..1.0)),
                0.01,
                FeatureKind::Lpcnet,
            )
            .unwrap(),
        }
    }

    #[test]
    fn teacher_forced_shapes() {
        let mut rng = seeded_rng(1);
        let ex = example(&mut rng, 4, 6, 5, "a");
        let model = VcModel::new(toy_config(5), "a", FeatureNormalizer::identity(20)).unwrap();
        let out = vc_forward(&model, &ex.ppg, &ex.logf0, Some(&ex.target)).unwrap();
        assert_eq!(out.features.data().dim(), (6, 20));
        assert_eq!(out.alignment.dim(), (3, 4));
        let again = vc_forward(&model, &ex.ppg, &ex.logf0, Some(&ex.target)).unwrap();
        assert_eq!(out.features, again.features);
        for (t, n) in [(1, 1), (3, 7), (5, 2)] {
            let ex = example(&mut rng, t, n, 5, "a");
            let out = vc_forward(&model, &ex.ppg, &ex.logf0, Some(&ex.target)).unwrap();
            assert_eq!(out.features.num_frames(), n);
            assert_eq!(out.alignment.dim(), (n.div_ceil(2), t));
        }
        assert!(matches!(vc_forward(&model, &ex.ppg, &ex.logf0[..3], None), Err(Error::Data(_))));
    }

    #[test]
    fn loss_gradients() {
        let mut rng = seeded_rng(2);
        let ex = example(&mut rng, 3, 4, 4, "a");
        let mut model = VcModel::new(toy_config(4), "a", FeatureNormalizer::identity(20)).unwrap();
        // keep rectifiers away from their kink at exactly zero
        crate::nn::jitter(&mut model.params, 0.1, &mut rng);
        let mut g = Graph::new();
        let (_, l) = model.loss_graph(&mut g, model.params(), &ex);
        let grads = g.backward(l);
        let rep = check_gradients(model.params(), &grads, 1e-6, |p| {
            let mut g = Graph::new();
            let (_, l) = model.loss_graph(&mut g, p, &ex);
            g.scalar(l)
        });
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn speaker_and_empty_checks() {
        let mut rng = seeded_rng(3);
        let a = example(&mut rng, 3, 5, 4, "a");
        let b = example(&mut rng, 3, 5, 4, "b");
        let err = train_vc(&[a.clone(), b], &toy_config(4), None).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        assert!(train_vc(&[], &toy_config(4), None).is_err());
        let (m, _) = train_vc(std::slice::from_ref(&a), &toy_config(4), None).unwrap();
        let c = example(&mut rng, 3, 5, 4, "c");
        assert!(train_vc(&[c], &toy_config(4), Some(m)).is_err());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut rng = seeded_rng(5);
        let data: Vec<VcExample> = (0..3).map(|i| example(&mut rng, 3 + i, 5 + i, 4, "a")).collect();
        let cfg = VcConfig { epochs: 4, ..toy_config(4) };
        let (full, full_rep) = train_vc(&data, &cfg, None).unwrap();

        let half = VcConfig { epochs: 2, ..cfg.clone() };
        let (m, _) = train_vc(&data, &half, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vc.json");
        m.save(&p).unwrap();
        let (resumed, rep) = train_vc(&data, &half, Some(VcModel::load(&p).unwrap())).unwrap();
        assert_eq!(resumed.epochs_trained, 4);
        for (a, b) in rep.epoch_losses.iter().zip(&full_rep.epoch_losses[2..]) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        let (x, y) = (full.evaluate(&data[0]).unwrap(), resumed.evaluate(&data[0]).unwrap());
        assert!((x.0 - y.0).abs() < 1e-9);
    }

    #[test]
    fn free_running_is_deterministic() {
        let mut rng = seeded_rng(6);
        let ex = example(&mut rng, 4, 6, 5, "a");
        let model = VcModel::new(toy_config(5), "a", FeatureNormalizer::identity(20)).unwrap();
        let a = vc_forward(&model, &ex.ppg, &ex.logf0, None).unwrap();
        let b = vc_forward(&model, &ex.ppg, &ex.logf0, None).unwrap();
        assert_eq!(a.features, b.features);
        assert!(a.features.num_frames() <= 30 * 4);
        assert!((a.features.frame_shift() - 0.01).abs() < 1e-12);
    }
}
