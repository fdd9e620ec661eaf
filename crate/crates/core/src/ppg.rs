//! Phonetic posteriorgram extractor: a bidirectional GRU frame classifier
//! from MFCCs to senone posteriors.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureKind, FeatureTrack};
use crate::error::{Error, Result};
use crate::model_io::{load_checkpoint, save_checkpoint, FeatureNormalizer, TrainReport};
use crate::nn::graph::softmax_row_in_place;
use crate::nn::{seeded_rng, Adam, AdamConfig, BiRnn, Graph, Linear, ParamStore, RnnKind, Var};

pub const ARCH: &str = "ppg-bigru";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpgConfig {
    pub layers: usize,
    pub hidden: usize,
    pub senones: usize,
    pub input_dim: usize,
    pub epochs: usize,
    /// Utterances per optimizer step.
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PpgConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 32,
            senones: 488,
            input_dim: 13,
            epochs: 40,
            batch: 2,
            lr: 5e-3,
            seed: 0,
        }
    }
}

impl PpgConfig {
    /// Five 550-unit bidirectional layers over 488 senones.
    pub fn full_scale() -> Self {
        Self { layers: 5, hidden: 550, senones: 488, ..Self::default() }
    }
}

/// Frame-level senone labels of one utterance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SenoneLabels {
    pub utterance_id: String,
    pub labels: Vec<usize>,
}

/// Reads `utterance_id<TAB>labels` lines.
pub fn read_senone_labels(text: &str) -> Result<Vec<SenoneLabels>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (id, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("senone labels line {}: missing tab", n + 1)))?;
        let labels = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("senone labels line {}: {e}", n + 1)))?;
        out.push(SenoneLabels { utterance_id: id.to_string(), labels });
    }
    Ok(out)
}

pub fn write_senone_labels(entries: &[SenoneLabels]) -> String {
    let mut s = String::new();
    for e in entries {
        let labels: Vec<String> = e.labels.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "{}\t{}", e.utterance_id, labels.join(" "));
    }
    s
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PpgModel {
    pub config: PpgConfig,
    /// Input mean/variance normalization fitted on the training MFCCs.
    pub input_norm: FeatureNormalizer,
    rnns: Vec<BiRnn>,
    out: Linear,
    params: ParamStore,
}

impl PpgModel {
    pub fn new(config: PpgConfig, input_norm: FeatureNormalizer) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.senones < 2 {
            return Err(Error::Config("PPG model needs >= 1 layer, >= 1 unit and >= 2 senones".into()));
        }
        if input_norm.dim() != config.input_dim {
            return Err(Error::Config("input normalizer dimension differs from input_dim".into()));
        }
        let mut rng = seeded_rng(config.seed);
        let mut params = ParamStore::new();
        let mut rnns = Vec::new();
        for l in 0..config.layers {
            let din = if l == 0 { config.input_dim } else { 2 * config.hidden };
            rnns.push(BiRnn::new(&mut params, &format!("gru{l}"), RnnKind::Gru, din, config.hidden, &mut rng));
        }
        let out = Linear::new(&mut params, "out", 2 * config.hidden, config.senones, &mut rng);
        Ok(Self { config, input_norm, rnns, out, params })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_input(&self, mfcc: &Array2<f64>) -> Result<()> {
        if mfcc.ncols() != self.config.input_dim {
            return Err(Error::Type(format!(
                "MFCC dimension {} does not match the model input {}",
                mfcc.ncols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// `T × S` logits.
    pub fn logits(&self, g: &mut Graph, params: &ParamStore, mfcc: &Array2<f64>) -> Var {
        let mut h = g.constant(self.input_norm.normalize(mfcc));
        for rnn in &self.rnns {
            h = rnn.forward(g, params, h);
        }
        self.out.forward(g, params, h)
    }

    /// Mean frame cross-entropy.
    pub fn loss(&self, g: &mut Graph, params: &ParamStore, mfcc: &Array2<f64>, labels: &[usize]) -> Var {
        let logits = self.logits(g, params, mfcc);
        g.softmax_cross_entropy(logits, labels)
    }

    pub fn posteriors(&self, mfcc: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(mfcc)?;
        let mut g = Graph::new();
        let l = self.logits(&mut g, &self.params, mfcc);
        let mut p = g.value(l).clone();
        for row in p.rows_mut() {
            softmax_row_in_place(row);
        }
        Ok(p)
    }

    /// Fraction of frames whose argmax posterior equals the label.
    pub fn frame_accuracy(&self, dataset: &[(FeatureTrack, SenoneLabels)]) -> Result<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for (mfcc, lab) in dataset {
            let p = self.posteriors(mfcc.data())?;
            for (row, &y) in p.rows().into_iter().zip(&lab.labels) {
                hit += usize::from(crate::attention::argmax(row.iter().copied()) == y);
                total += 1;
            }
        }
        Ok(hit as f64 / total.max(1) as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, ARCH, self)
    }

    /// Loads a checkpoint; with `expect`, its `(layers, hidden, senones)`
    /// must match.
    pub fn load(path: &Path, expect: Option<(usize, usize, usize)>) -> Result<Self> {
        let m: Self = load_checkpoint(path, ARCH)?;
        let got = (m.config.layers, m.config.hidden, m.config.senones);
        if let Some(want) = expect {
            if want != got {
                return Err(Error::Checkpoint(format!("checkpoint has (N, H, S) = {got:?}, expected {want:?}")));
            }
        }
        Ok(m)
    }
}

fn validate_dataset(dataset: &[(FeatureTrack, SenoneLabels)], config: &PpgConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Data("empty PPG training set".into()));
    }
    for (mfcc, lab) in dataset {
        mfcc.expect_kind(FeatureKind::Mfcc)?;
        if mfcc.num_frames() != lab.labels.len() {
            return Err(Error::Data(format!(
                "utterance {}: {} MFCC frames but {} labels",
                lab.utterance_id,
                mfcc.num_frames(),
                lab.labels.len()
            )));
        }
        if let Some(bad) = lab.labels.iter().find(|&&y| y >= config.senones) {
            return Err(Error::Data(format!("utterance {}: label {bad} >= {}", lab.utterance_id, config.senones)));
        }
    }
    Ok(())
}

/// Trains a fresh extractor with Adam on mean frame cross-entropy.
pub fn train_ppg_extractor(
    dataset: &[(FeatureTrack, SenoneLabels)],
    config: &PpgConfig,
) -> Result<(PpgModel, TrainReport)> {
    validate_dataset(dataset, config)?;
    let norm = FeatureNormalizer::fit(dataset.iter().map(|(m, _)| m.data()))?;
    let mut model = PpgModel::new(config.clone(), norm)?;
    let report = continue_training(&mut model, dataset, config.epochs)?;
    Ok((model, report))
}

/// Runs `epochs` more epochs on an existing model.
pub fn continue_training(
    model: &mut PpgModel,
    dataset: &[(FeatureTrack, SenoneLabels)],
    epochs: usize,
) -> Result<TrainReport> {
    validate_dataset(dataset, &model.config)?;
    for (m, _) in dataset {
        model.check_input(m.data())?;
    }
    let cfg = model.config.clone();
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &model.params);
    let mut rng = seeded_rng(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = TrainReport::default();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            let mut acc = std::collections::HashMap::new();
            for &i in chunk {
                let (mfcc, lab) = &dataset[i];
                let mut g = Graph::new();
                let l = model.loss(&mut g, &model.params, mfcc.data(), &lab.labels);
                epoch_loss += g.scalar(l);
                crate::nn::params::accumulate_grads(&mut acc, g.backward(l));
            }
            adam.update(&mut model.params, &acc, chunk.len());
            report.steps += 1;
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric("PPG training loss diverged".into()));
        }
        log::debug!("ppg epoch loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

/// Posteriorgram of one utterance; rows lie on the probability simplex.
pub fn extract_ppg(model: &PpgModel, mfcc: &FeatureTrack) -> Result<FeatureTrack> {
    mfcc.expect_kind(FeatureKind::Mfcc)?;
    let p = model.posteriors(mfcc.data())?;
    FeatureTrack::new(p, mfcc.frame_shift(), FeatureKind::Ppg)
}

/// Non-overlapping mean pooling by `factor`; the last group may be partial.
pub fn downsample_ppg(ppg: &FeatureTrack, factor: usize) -> Result<FeatureTrack> {
    if factor < 1 {
        return Err(Error::Argument("downsampling factor must be >= 1".into()));
    }
    let data = mean_pool(ppg.data(), factor);
    FeatureTrack::new(data, ppg.frame_shift() * factor as f64, ppg.kind())
}

pub(crate) fn mean_pool(x: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    let out_len = n.div_ceil(factor);
    let mut out = Array2::zeros((out_len, d));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let start = i * factor;
        let end = (start + factor).min(n);
        for r in start..end {
            row += &x.row(r);
        }
        row /= (end - start) as f64;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check_gradients;
    use proptest::prelude::*;
    use rand::Rng;

    fn mfcc(data: Array2<f64>) -> FeatureTrack {
        FeatureTrack::new(data, 0.01, FeatureKind::Mfcc).unwrap()
    }

    fn tiny(senones: usize) -> PpgConfig {
        PpgConfig { layers: 1, hidden: 3, senones, input_dim: 2, seed: 3, ..PpgConfig::default() }
    }

    #[test]
    fn label_file_round_trip() {
        let e = vec![
            SenoneLabels { utterance_id: "u1".into(), labels: vec![0, 3, 3] },
            SenoneLabels { utterance_id: "u2".into(), labels: vec![] },
        ];
        let text = write_senone_labels(&e);
        assert_eq!(read_senone_labels(&text).unwrap(), e);
        assert!(read_senone_labels("u1 0 1").is_err());
    }

    #[test]
    fn cross_entropy_gradients() {
        let mut rng = seeded_rng(9);
        let x = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));
        let cfg = PpgConfig { layers: 2, ..tiny(4) };
        let model = PpgModel::new(cfg, FeatureNormalizer::identity(2)).unwrap();
        let labels = [0, 2, 3];
        let mut g = Graph::new();
        let l = model.loss(&mut g, model.params(), &x, &labels);
        let grads = g.backward(l);
        let rep = check_gradients(model.params(), &grads, 1e-6, |p| {
            let mut g = Graph::new();
            let l = model.loss(&mut g, p, &x, &labels);
            g.scalar(l)
        });
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn untrained_loss_near_log_classes() {
        let mut rng = seeded_rng(2);
        let cfg = PpgConfig { input_dim: 13, hidden: 16, ..PpgConfig::default() };
        let model = PpgModel::new(cfg, FeatureNormalizer::identity(13)).unwrap();
        let x = Array2::from_shape_fn((50, 13), |_| rng.gen_range(-1.0..1.0));
        let labels: Vec<usize> = (0..50).map(|_| rng.gen_range(0..488)).collect();
        let mut g = Graph::new();
        let l = model.loss(&mut g, model.params(), &x, &labels);
        assert!((g.scalar(l) - 488f64.ln()).abs() < 0.1, "{}", g.scalar(l));
        let p = model.posteriors(&x).unwrap();
        assert_eq!(p.ncols(), 488);
    }

    #[test]
    fn separable_two_class_overfit() {
        let mut rng = seeded_rng(11);
        let protos = [[1.0, -0.5], [-1.0, 0.5]];
        let mut data = Vec::new();
        for u in 0..4 {
            let labels: Vec<usize> = (0..30).map(|t| (t / 5 + u) % 2).collect();
            let x = Array2::from_shape_fn((30, 2), |(t, d)| protos[labels[t]][d] + rng.gen_range(-0.2..0.2));
            data.push((mfcc(x), SenoneLabels { utterance_id: format!("u{u}"), labels }));
        }
        let cfg = PpgConfig { hidden: 8, epochs: 30, ..tiny(2) };
        let (model, rep) = train_ppg_extractor(&data, &cfg).unwrap();
        assert!(rep.final_loss().unwrap() < rep.epoch_losses[0]);
        assert!(model.frame_accuracy(&data).unwrap() >= 0.99);
        let p = extract_ppg(&model, &data[0].0).unwrap();
        assert_eq!(p, extract_ppg(&model, &data[0].0).unwrap());
    }

    #[test]
    fn data_errors() {
        let x = mfcc(Array2::zeros((3, 2)));
        let bad = vec![(x.clone(), SenoneLabels { utterance_id: "u".into(), labels: vec![0, 1] })];
        let err = train_ppg_extractor(&bad, &tiny(2)).unwrap_err().to_string();
        assert!(err.contains('u'), "{err}");
        assert!(train_ppg_extractor(&[], &tiny(2)).is_err());
        let model = PpgModel::new(tiny(2), FeatureNormalizer::identity(2)).unwrap();
        assert!(matches!(extract_ppg(&model, &mfcc(Array2::zeros((3, 5)))), Err(Error::Type(_))));
    }

    #[test]
    fn checkpoint_validates_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ppg.json");
        let model = PpgModel::new(tiny(2), FeatureNormalizer::identity(2)).unwrap();
        model.save(&p).unwrap();
        let back = PpgModel::load(&p, Some((1, 3, 2))).unwrap();
        let x = Array2::from_elem((4, 2), 0.3);
        assert_eq!(back.posteriors(&x).unwrap(), model.posteriors(&x).unwrap());
        assert!(matches!(PpgModel::load(&p, Some((5, 550, 488))), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn downsampling_examples() {
        let p = FeatureTrack::new(Array2::from_elem((10, 4), 0.25), 0.01, FeatureKind::Ppg).unwrap();
        assert_eq!(downsample_ppg(&p, 1).unwrap(), p);
        let d = downsample_ppg(&p, 2).unwrap();
        assert_eq!(d.num_frames(), 5);
        assert!(d.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!((d.frame_shift() - 0.02).abs() < 1e-15);
        assert!(matches!(downsample_ppg(&p, 0), Err(Error::Argument(_))));
    }

    fn random_ppg(rng: &mut rand_chacha::ChaCha8Rng, n: usize, s: usize) -> FeatureTrack {
        let mut x = Array2::from_shape_fn((n, s), |_| rng.gen_range(-3.0..3.0));
        for row in x.rows_mut() {
            softmax_row_in_place(row);
        }
        FeatureTrack::new(x, 0.01, FeatureKind::Ppg).unwrap()
    }

    proptest! {
        #[test]
        fn downsampling_stays_on_simplex(n in 1usize..40, f in 1usize..6, seed in 0u64..100) {
            let p = random_ppg(&mut seeded_rng(seed), n, 5);
            let d = downsample_ppg(&p, f).unwrap();
            prop_assert_eq!(d.num_frames(), n.div_ceil(f));
            for row in d.data().rows() {
                prop_assert!((row.sum() - 1.0).abs() < 1e-5);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn composed_downsampling_length(a in 1usize..4, b in 1usize..4, k in 1usize..5) {
            let n = a * b * k;
            let p = random_ppg(&mut seeded_rng(k as u64), n, 3);
            let once = downsample_ppg(&p, a * b).unwrap();
            let twice = downsample_ppg(&downsample_ppg(&p, a).unwrap(), b).unwrap();
            prop_assert_eq!(once.num_frames(), twice.num_frames());
        }
    }
}
