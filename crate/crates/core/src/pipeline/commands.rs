//! The stages behind the CLI. Each stage works inside a [`Workspace`], skips
//! itself when its inputs hash the same as last time, and leaves a
//! [`RunRecord`](super::workspace::RunRecord) under `records/`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::{resolve, CorpusManifest, Language, ManifestEntry};
use super::synth::make_synthetic_corpus;
use super::workspace::{hash_file, relative_to, stage_digest, DirLock, RunRecord, Workspace};
use crate::attention::attention_alignment;
use crate::dsp::f0::downsample_normalized_logf0;
use crate::dsp::{extract_logf0, extract_lpcnet_features, extract_mfcc, fit_f0_stats, AudioClip, F0Stats, FeatureKind, FeatureTrack};
use crate::error::{Error, Result};
use crate::model_io::read_json;
use crate::ppg::{downsample_ppg, extract_ppg, read_senone_labels, train_ppg_extractor, PpgModel};
use crate::text::{generate_code_switched, tokenize_english, tokenize_mandarin, tokenize_mixed, BilingualLexicon, PhonemeSequence, SymbolTable};
use crate::tts::duration::{read_durations, write_durations};
use crate::tts::{augment_with_code_switch, extract_durations, synthesize, train_tts, SynthesisOptions, TtsArch, TtsExample, TtsModel};
use crate::vc::{convert, train_vc, VcExample, VcModel};
use crate::vocoder::render;

const FEATURE_TAGS: [&str; 3] = ["mfcc", "lf0", "lpcnet"];

/// Manifest note on utterances whose extracted durations look degenerate.
pub const DEGENERATE_NOTE: &str = "degenerate-durations";

/// A stage result, possibly replayed from an earlier identical run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Staged<T> {
    pub skipped: bool,
    pub report: T,
}

/// Outcome of a training stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub utterances: usize,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    /// Quality bars that were missed.
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub manifest: PathBuf,
    pub utterances: usize,
    pub speakers: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub computed: Vec<String>,
    pub skipped: Vec<String>,
    /// `(utterance or speaker, error)`.
    pub failed: Vec<(String, String)>,
    pub stats: Vec<PathBuf>,
}

impl PrepareReport {
    pub fn ensure_ok(&self) -> Result<()> {
        if self.failed.is_empty() {
            return Ok(());
        }
        let list: Vec<String> = self.failed.iter().map(|(id, e)| format!("{id}: {e}")).collect();
        Err(Error::Data(format!("{} item(s) failed: {}", self.failed.len(), list.join("; "))).in_stage("prepare"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BilingualSpeaker {
    pub speaker: String,
    pub manifest: PathBuf,
    pub originals: usize,
    pub converted: usize,
    /// Converted entries reused from an earlier run.
    pub reused: usize,
    pub truncated: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BilingualReport {
    pub speakers: Vec<BilingualSpeaker>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DurationsSummary {
    pub path: PathBuf,
    pub utterances: usize,
    pub layer: usize,
    pub head: usize,
    pub score: f64,
    pub degenerate: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub manifest: PathBuf,
    pub sentences_file: PathBuf,
    pub before: usize,
    pub after: usize,
    pub added: Vec<String>,
    pub skipped: Vec<(usize, String)>,
    pub truncated: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub wavs: Vec<PathBuf>,
    pub features: Vec<PathBuf>,
    /// Sentences whose decoding hit the frame cap.
    pub truncated: Vec<usize>,
}

/// Arguments of `train-tts`.
#[derive(Clone, Debug)]
pub struct TrainTtsArgs {
    pub arch: TtsArch,
    pub manifest: PathBuf,
    pub durations: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Checkpoint name under `models/`; `tts_{arch}`, or `{resumed}_refined`.
    pub name: Option<String>,
    /// Overrides the configured epochs (or refinement epochs when resuming).
    pub epochs: Option<usize>,
}

impl TrainTtsArgs {
    pub fn new(arch: TtsArch, manifest: impl Into<PathBuf>) -> Self {
        Self { arch, manifest: manifest.into(), durations: None, resume: None, name: None, epochs: None }
    }
}

pub struct Pipeline {
    pub ws: Workspace,
    pub config: PipelineConfig,
    pub table: SymbolTable,
    pub lexicon: BilingualLexicon,
    pool: rayon::ThreadPool,
}

fn rel_string(p: &Path, base: &Path) -> String {
    relative_to(p, base).to_string_lossy().replace('\\', "/")
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "manifest".into())
}

/// Hashes a feature file together with its metadata sidecar.
fn hash_track(path: &Path) -> Result<String> {
    Ok(format!("{}:{}", hash_file(path)?, hash_file(&FeatureTrack::sidecar_path(path))?))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn bar(warnings: &mut Vec<String>, name: &str, value: f64, threshold: f64, at_least: bool) {
    let ok = if at_least { value >= threshold } else { value < threshold };
    if !ok {
        let rel = if at_least { ">=" } else { "<" };
        let w = format!("{name} {value:.4} misses the bar {rel} {threshold}");
        log::warn!("{w}");
        warnings.push(w);
    }
}

impl Pipeline {
    pub fn new(out: impl Into<PathBuf>, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let table = SymbolTable::canonical();
        let lexicon = config.lexicon()?;
        lexicon.validate(&table)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(Self { ws: Workspace::new(out)?, config, table, lexicon, pool })
    }

    /// Runs `run` unless the record of `stage` shows the same config and
    /// inputs and its outputs are intact.
    fn gated<C, T>(
        &self,
        stage: &str,
        config: &C,
        inputs: BTreeMap<String, String>,
        run: impl FnOnce() -> Result<(T, Vec<PathBuf>)>,
    ) -> Result<Staged<T>>
    where
        C: Serialize,
        T: Serialize + DeserializeOwned,
    {
        let digest = stage_digest(config, &inputs)?;
        if self.ws.up_to_date(stage, &digest) {
            let rec: RunRecord = read_json(&self.ws.record_path(stage))?;
            if let Ok(report) = serde_json::from_value(rec.summary) {
                log::info!("{stage}: inputs unchanged, skipping");
                return Ok(Staged { skipped: true, report });
            }
        }
        let (report, outputs) = run().map_err(|e| e.in_stage(stage))?;
        self.ws.record(stage, self.config.seed, config, inputs, &digest, &outputs, serde_json::to_value(&report)?)?;
        Ok(Staged { skipped: false, report })
    }

    fn read_manifest(&self, path: &Path) -> Result<CorpusManifest> {
        let m = CorpusManifest::read(path)?;
        m.validate(&manifest_dir(path))?;
        Ok(m)
    }

    /// Path of the LPCNet features an entry trains on.
    fn lpcnet_path(&self, base: &Path, e: &ManifestEntry) -> PathBuf {
        match &e.features_path {
            Some(p) => resolve(base, p),
            None => self.ws.feature(&e.utterance_id, "lpcnet"),
        }
    }

    fn load_prepared(&self, id: &str, tag: &str) -> Result<FeatureTrack> {
        let p = self.ws.feature(id, tag);
        if !p.exists() {
            return Err(Error::Data(format!("utterance {id}: no {tag} features at {}; run prepare first", p.display())));
        }
        FeatureTrack::load(p)
    }

    fn load_stats(&self, speaker: &str) -> Result<F0Stats> {
        let p = self.ws.f0_stats(speaker);
        if !p.exists() {
            return Err(Error::Data(format!("speaker {speaker}: no F0 statistics at {}; run prepare first", p.display())));
        }
        read_json(&p)
    }

    fn load_ppg(&self) -> Result<PpgModel> {
        let c = &self.config.ppg;
        PpgModel::load(&self.ws.model("ppg"), Some((c.layers, c.hidden, c.senones)))
    }

    pub fn tokenize(&self, e: &ManifestEntry) -> Result<PhonemeSequence> {
        let (lex, table) = (&self.lexicon, &self.table);
        match e.language {
            Language::En => tokenize_english(&e.transcript, lex, table),
            Language::Zh => tokenize_mandarin(&e.transcript, lex, table),
            Language::Cs => tokenize_mixed(&e.transcript, lex, table),
        }
    }

    /// Writes the seeded synthetic corpus to `corpus/`.
    pub fn make_synthetic_corpus(&self) -> Result<Staged<CorpusSummary>> {
        let cfg = (&self.config.corpus, self.config.seed);
        self.gated("make-synthetic-corpus", &cfg, BTreeMap::new(), || {
            let corpus = make_synthetic_corpus(&self.config.corpus, self.config.seed)?;
            let dir = self.ws.corpus_dir();
            corpus.write(&dir)?;
            let manifest = corpus.manifest();
            let mut outputs: Vec<PathBuf> =
                manifest.entries.iter().map(|e| resolve(&dir, &e.audio_path)).collect();
            outputs.extend(["manifest.jsonl", "senones.txt", "durations.txt"].map(|f| dir.join(f)));
            let summary = CorpusSummary {
                manifest: self.ws.corpus_manifest(),
                utterances: manifest.entries.len(),
                speakers: manifest.speakers(),
            };
            Ok((summary, outputs))
        })
    }

    /// Extracts MFCC, log-F0 and LPCNet features of every utterance with
    /// audio, then per-speaker F0 statistics. Per-item failures are
    /// collected in the report.
    pub fn prepare(&self, manifest_path: &Path) -> Result<PrepareReport> {
        let manifest = CorpusManifest::read(manifest_path).map_err(|e| e.in_stage("prepare"))?;
        let base = manifest_dir(manifest_path);
        let fcfg = &self.config.features;
        let entries: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.features_path.is_none()).collect();

        let results: Vec<(String, Result<bool>)> = self.pool.install(|| {
            entries
                .par_iter()
                .map(|e| {
                    let id = e.utterance_id.clone();
                    let r = (|| {
                        let audio = resolve(&base, &e.audio_path);
                        if !audio.exists() {
                            return Err(Error::Data(format!("audio {} not found", audio.display())));
                        }
                        let inputs = BTreeMap::from([("audio".to_string(), hash_file(&audio)?)]);
                        let stage = format!("prepare/{id}");
                        let digest = stage_digest(fcfg, &inputs)?;
                        if self.ws.up_to_date(&stage, &digest) {
                            return Ok(false);
                        }
                        let clip = AudioClip::read_wav(&audio)?;
                        let tracks = [extract_mfcc(&clip, fcfg)?, extract_logf0(&clip, fcfg)?, extract_lpcnet_features(&clip, fcfg)?];
                        let mut outputs = Vec::new();
                        for (t, tag) in tracks.iter().zip(FEATURE_TAGS) {
                            let p = self.ws.feature(&id, tag);
                            if let Some(dir) = p.parent() {
                                std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
                            }
                            t.save(&p)?;
                            outputs.push(FeatureTrack::sidecar_path(&p));
                            outputs.push(p);
                        }
                        self.ws.record(&stage, self.config.seed, fcfg, inputs, &digest, &outputs, serde_json::Value::Null)?;
                        Ok(true)
                    })();
                    (id, r)
                })
                .collect()
        });

        let mut report = PrepareReport::default();
        for (id, r) in results {
            match r {
                Ok(true) => report.computed.push(id),
                Ok(false) => report.skipped.push(id),
                Err(e) => {
                    log::error!("utterance {id}: {e}");
                    report.failed.push((id, e.to_string()));
                }
            }
        }
        log::info!("prepare: {} computed, {} up to date, {} failed", report.computed.len(), report.skipped.len(), report.failed.len());

        let failed: std::collections::HashSet<&str> = report.failed.iter().map(|(id, _)| id.as_str()).collect();
        let mut stats_failed = Vec::new();
        for speaker in manifest.speakers() {
            let ids: Vec<&str> = entries
                .iter()
                .filter(|e| e.speaker_id == speaker && !failed.contains(e.utterance_id.as_str()))
                .map(|e| e.utterance_id.as_str())
                .collect();
            if ids.is_empty() {
                continue;
            }
            let r = (|| {
                let mut inputs = BTreeMap::new();
                for id in &ids {
                    inputs.insert(id.to_string(), hash_track(&self.ws.feature(id, "lf0"))?);
                }
                let out = self.ws.f0_stats(&speaker);
                let stage = format!("prepare-stats/{speaker}");
                let digest = stage_digest(&speaker, &inputs)?;
                if !self.ws.up_to_date(&stage, &digest) {
                    let tracks = ids.iter().map(|id| self.load_prepared(id, "lf0")).collect::<Result<Vec<_>>>()?;
                    let stats = fit_f0_stats(&speaker, &tracks)?;
                    crate::model_io::write_json(&out, &stats)?;
                    self.ws.record(&stage, self.config.seed, &speaker, inputs, &digest, std::slice::from_ref(&out), serde_json::Value::Null)?;
                }
                Ok::<_, Error>(out)
            })();
            match r {
                Ok(p) => report.stats.push(p),
                Err(e) => {
                    log::error!("speaker {speaker}: {e}");
                    stats_failed.push((format!("speaker {speaker}"), e.to_string()));
                }
            }
        }
        report.failed.extend(stats_failed);
        let summary = serde_json::to_value(&report)?;
        let inputs = BTreeMap::from([("manifest".to_string(), hash_file(manifest_path)?)]);
        let digest = stage_digest(fcfg, &inputs)?;
        let mut outputs = report.stats.clone();
        for id in report.computed.iter().chain(&report.skipped) {
            outputs.extend(FEATURE_TAGS.iter().map(|t| self.ws.feature(id, t)));
        }
        self.ws.record("prepare", self.config.seed, fcfg, inputs, &digest, &outputs, summary)?;
        Ok(report)
    }

    /// Trains the PPG extractor on every utterance that has senone labels.
    /// `labels` defaults to `senones.txt` beside the manifest.
    pub fn train_ppg(&self, manifest_path: &Path, labels: Option<&Path>) -> Result<Staged<TrainSummary>> {
        let manifest = self.read_manifest(manifest_path)?;
        let labels_path = labels.map(Path::to_path_buf).unwrap_or_else(|| manifest_dir(manifest_path).join("senones.txt"));
        let text = std::fs::read_to_string(&labels_path).map_err(|e| Error::io(&labels_path, e))?;
        let by_id: HashMap<String, _> =
            read_senone_labels(&text)?.into_iter().map(|l| (l.utterance_id.clone(), l)).collect();
        let ids: Vec<&str> = manifest
            .entries
            .iter()
            .filter(|e| by_id.contains_key(&e.utterance_id))
            .map(|e| e.utterance_id.as_str())
            .collect();
        if ids.is_empty() {
            return Err(Error::Data(format!("no manifest utterance has labels in {}", labels_path.display())).in_stage("train-ppg"));
        }
        let mut inputs = BTreeMap::from([("labels".to_string(), hash_file(&labels_path)?)]);
        for id in &ids {
            inputs.insert(id.to_string(), hash_track(&self.ws.feature(id, "mfcc"))?);
        }
        let cfg = (&self.config.ppg, &self.config.thresholds);
        self.gated("train-ppg", &cfg, inputs, || {
            let _lock = DirLock::acquire(&self.ws.models_dir())?;
            let dataset = ids
                .iter()
                .map(|id| Ok((self.load_prepared(id, "mfcc")?, by_id[*id].clone())))
                .collect::<Result<Vec<_>>>()?;
            let (model, tr) = train_ppg_extractor(&dataset, &self.config.ppg)?;
            let path = self.ws.model("ppg");
            model.save(&path)?;
            let acc = model.frame_accuracy(&dataset)?;
            let mut warnings = Vec::new();
            bar(&mut warnings, "PPG frame accuracy", acc, self.config.thresholds.frame_accuracy, true);
            let summary = TrainSummary {
                model: path.clone(),
                utterances: dataset.len(),
                epochs: self.config.ppg.epochs,
                final_loss: tr.final_loss(),
                metrics: BTreeMap::from([("frame_accuracy".into(), acc)]),
                warnings,
            };
            Ok((summary, vec![path]))
        })
    }

    /// VC training pairs for the original recordings of `speaker`.
    pub fn vc_dataset(&self, manifest: &CorpusManifest, speaker: &str) -> Result<Vec<VcExample>> {
        let ppg_model = self.load_ppg()?;
        let stats = self.load_stats(speaker)?;
        let factor = self.config.vc.downsample;
        let entries: Vec<&ManifestEntry> =
            manifest.by_speaker(speaker).into_iter().filter(|e| !e.synthetic).collect();
        if entries.is_empty() {
            return Err(Error::Data(format!("speaker {speaker} has no original recordings")));
        }
        self.pool.install(|| {
            entries
                .par_iter()
                .map(|e| {
                    let id = &e.utterance_id;
                    let mfcc = self.load_prepared(id, "mfcc")?;
                    let ppg = downsample_ppg(&extract_ppg(&ppg_model, &mfcc)?, factor)?;
                    let lf0 = self.load_prepared(id, "lf0")?;
                    let logf0 = downsample_normalized_logf0(&lf0, &stats, factor)?;
                    let target = self.load_prepared(id, "lpcnet")?;
                    Ok(VcExample { utterance_id: id.clone(), speaker_id: speaker.to_string(), ppg, logf0, target })
                })
                .collect()
        })
    }

    /// Trains the conversion model of one target speaker on its own corpus.
    pub fn train_vc(&self, manifest_path: &Path, speaker: &str) -> Result<Staged<TrainSummary>> {
        let manifest = self.read_manifest(manifest_path)?;
        let mut inputs = BTreeMap::from([
            ("ppg".to_string(), hash_file(&self.ws.model("ppg")).map_err(|e| e.in_stage("train-vc"))?),
            ("stats".to_string(), hash_file(&self.ws.f0_stats(speaker)).map_err(|e| e.in_stage("train-vc"))?),
        ]);
        for e in manifest.by_speaker(speaker).into_iter().filter(|e| !e.synthetic) {
            for tag in FEATURE_TAGS {
                inputs.insert(format!("{}.{tag}", e.utterance_id), hash_track(&self.ws.feature(&e.utterance_id, tag))?);
            }
        }
        let stage = format!("train-vc/{speaker}");
        let cfg = (&self.config.vc, &self.config.thresholds);
        self.gated(&stage, &cfg, inputs, || {
            let _lock = DirLock::acquire(&self.ws.models_dir())?;
            let dataset = self.vc_dataset(&manifest, speaker)?;
            let (model, tr) = train_vc(&dataset, &self.config.vc, None)?;
            let path = self.ws.model(&format!("vc_{speaker}"));
            model.save(&path)?;
            let evals = self.pool.install(|| dataset.par_iter().map(|ex| model.evaluate(ex)).collect::<Result<Vec<_>>>())?;
            let mse = mean(&evals.iter().map(|e| e.0).collect::<Vec<_>>());
            let diag = mean(&evals.iter().map(|e| e.1).collect::<Vec<_>>());
            let mut warnings = Vec::new();
            bar(&mut warnings, "VC feature MSE", mse, self.config.thresholds.mse, false);
            bar(&mut warnings, "VC diagonality", diag, self.config.thresholds.diagonality, true);
            let summary = TrainSummary {
                model: path.clone(),
                utterances: dataset.len(),
                epochs: self.config.vc.epochs,
                final_loss: tr.final_loss(),
                metrics: BTreeMap::from([("mse".into(), mse), ("diagonality".into(), diag)]),
                warnings,
            };
            Ok((summary, vec![path]))
        })
    }

    /// Converts one recording of `source_speaker` into `target_speaker`'s
    /// voice and writes the LPCNet features to `output`.
    pub fn convert_file(&self, input: &Path, source_speaker: &str, target_speaker: &str, output: &Path) -> Result<FeatureTrack> {
        let run = || {
            let ppg = self.load_ppg()?;
            let vc = VcModel::load(&self.ws.model(&format!("vc_{target_speaker}")))?;
            let stats = self.load_stats(source_speaker)?;
            let clip = AudioClip::read_wav(input)?;
            let out = convert(&clip, &ppg, &vc, &stats, &self.config.features)?;
            if out.truncated {
                log::warn!("{}: decoding hit the frame cap", input.display());
            }
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            out.features.save(output)?;
            Ok(out.features)
        };
        run().map_err(|e: Error| e.in_stage("convert"))
    }

    /// One bilingual manifest per speaker: its own recordings plus every
    /// other speaker's recordings converted into its voice.
    pub fn build_bilingual(&self, manifest_path: &Path) -> Result<BilingualReport> {
        let run = || {
            let manifest = self.read_manifest(manifest_path)?;
            let base = manifest_dir(manifest_path);
            let ppg = self.load_ppg()?;
            let ppg_hash = hash_file(&self.ws.model("ppg"))?;
            let speakers = manifest.speakers();
            let mut report = BilingualReport::default();
            for target in &speakers {
                let vc_path = self.ws.model(&format!("vc_{target}"));
                let vc = VcModel::load(&vc_path)?;
                let vc_hash = hash_file(&vc_path)?;
                let out_path = self.ws.bilingual_manifest(target);
                let out_dir = manifest_dir(&out_path);
                let mut entries = Vec::new();
                for e in manifest.by_speaker(target).into_iter().filter(|e| !e.synthetic) {
                    let mut e = e.clone();
                    e.audio_path = rel_string(&resolve(&base, &e.audio_path), &out_dir);
                    e.features_path = Some(rel_string(&self.ws.feature(&e.utterance_id, "lpcnet"), &out_dir));
                    entries.push(e);
                }
                let originals = entries.len();
                let sources: Vec<&ManifestEntry> =
                    manifest.entries.iter().filter(|e| &e.speaker_id != target && !e.synthetic).collect();
                if sources.is_empty() {
                    let w = format!("speaker {target}: no other speaker's recordings to convert; manifest holds originals only");
                    log::warn!("{w}");
                    report.warnings.push(w);
                }
                let mut stats = HashMap::new();
                for s in &sources {
                    if !stats.contains_key(&s.speaker_id) {
                        stats.insert(s.speaker_id.clone(), self.load_stats(&s.speaker_id)?);
                    }
                }
                let converted: Vec<(ManifestEntry, bool, bool)> = self.pool.install(|| {
                    sources
                        .par_iter()
                        .map(|src| {
                            let id = format!("{}_as_{target}", src.utterance_id);
                            let audio = resolve(&base, &src.audio_path);
                            let feat = self.ws.path(format!("bilingual/features/{target}/{id}.lpcnet"));
                            let st = &stats[&src.speaker_id];
                            let inputs = BTreeMap::from([
                                ("audio".to_string(), hash_file(&audio)?),
                                ("ppg".to_string(), ppg_hash.clone()),
                                ("vc".to_string(), vc_hash.clone()),
                                ("stats".to_string(), serde_json::to_string(st)?),
                            ]);
                            let stage = format!("bilingual/{target}/{id}");
                            let digest = stage_digest(&self.config.features, &inputs)?;
                            let mut notes = vec![format!("converted from {}", src.utterance_id)];
                            let (reused, truncated) = if self.ws.up_to_date(&stage, &digest) {
                                let rec: RunRecord = read_json(&self.ws.record_path(&stage))?;
                                (true, rec.summary.get("truncated").and_then(|v| v.as_bool()).unwrap_or(false))
                            } else {
                                let clip = AudioClip::read_wav(&audio)?;
                                let out = convert(&clip, &ppg, &vc, st, &self.config.features)?;
                                if let Some(dir) = feat.parent() {
                                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                                }
                                out.features.save(&feat)?;
                                let outputs = [FeatureTrack::sidecar_path(&feat), feat.clone()];
                                let summary = serde_json::json!({ "truncated": out.truncated });
                                self.ws.record(&stage, self.config.seed, &self.config.features, inputs, &digest, &outputs, summary)?;
                                (false, out.truncated)
                            };
                            if truncated {
                                notes.push("decoder hit the frame cap".into());
                            }
                            let entry = ManifestEntry {
                                utterance_id: id,
                                audio_path: rel_string(&audio, &out_dir),
                                transcript: src.transcript.clone(),
                                language: src.language,
                                speaker_id: target.clone(),
                                synthetic: true,
                                features_path: Some(rel_string(&feat, &out_dir)),
                                notes,
                            };
                            Ok((entry, reused, truncated))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                let mut sp = BilingualSpeaker {
                    speaker: target.clone(),
                    manifest: out_path.clone(),
                    originals,
                    converted: converted.len(),
                    ..Default::default()
                };
                for (e, reused, truncated) in converted {
                    sp.reused += usize::from(reused);
                    if truncated {
                        sp.truncated.push(e.utterance_id.clone());
                    }
                    entries.push(e);
                }
                CorpusManifest::new(entries).write(&out_path)?;
                log::info!("speaker {target}: {} originals + {} converted ({} reused)", sp.originals, sp.converted, sp.reused);
                report.speakers.push(sp);
            }
            let inputs = BTreeMap::from([("manifest".to_string(), hash_file(manifest_path)?), ("ppg".to_string(), ppg_hash)]);
            let digest = stage_digest(&self.config.features, &inputs)?;
            let outputs: Vec<PathBuf> = report.speakers.iter().map(|s| s.manifest.clone()).collect();
            self.ws.record("build-bilingual", self.config.seed, &self.config.features, inputs, &digest, &outputs, serde_json::to_value(&report)?)?;
            Ok(report)
        };
        run().map_err(|e: Error| e.in_stage("build-bilingual"))
    }

    /// TTS examples of a manifest, with durations attached when given.
    pub fn tts_dataset(&self, manifest_path: &Path, durations: Option<&Path>) -> Result<Vec<TtsExample>> {
        let manifest = self.read_manifest(manifest_path)?;
        let base = manifest_dir(manifest_path);
        let durations: Option<HashMap<String, Vec<usize>>> = match durations {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Some(read_durations(&text)?.into_iter().map(|d| (d.utterance_id, d.durations)).collect())
            }
            None => None,
        };
        if manifest.entries.is_empty() {
            return Err(Error::Data(format!("{} has no utterances", manifest_path.display())));
        }
        self.pool.install(|| {
            manifest
                .entries
                .par_iter()
                .map(|e| {
                    let phonemes = self.tokenize(e).map_err(|err| Error::Data(format!("utterance {}: {err}", e.utterance_id)))?;
                    let target = FeatureTrack::load(self.lpcnet_path(&base, e))?;
                    target.expect_kind(FeatureKind::Lpcnet)?;
                    let durations = durations.as_ref().and_then(|d| d.get(&e.utterance_id).cloned());
                    Ok(TtsExample { utterance_id: e.utterance_id.clone(), phonemes, target, durations })
                })
                .collect()
        })
    }

    fn dataset_inputs(&self, manifest_path: &Path) -> Result<BTreeMap<String, String>> {
        let manifest = CorpusManifest::read(manifest_path)?;
        let base = manifest_dir(manifest_path);
        let mut inputs = BTreeMap::from([("manifest".to_string(), hash_file(manifest_path)?)]);
        for e in &manifest.entries {
            inputs.insert(e.utterance_id.clone(), hash_track(&self.lpcnet_path(&base, e))?);
        }
        Ok(inputs)
    }

    pub fn train_tts(&self, args: &TrainTtsArgs) -> Result<Staged<TrainSummary>> {
        let resumed = match &args.resume {
            Some(p) => {
                let m = TtsModel::load(p, &self.table).map_err(|e| e.in_stage("train-tts"))?;
                if m.arch != args.arch {
                    return Err(Error::Argument(format!("{} holds a {} model, not {}", p.display(), m.arch, args.arch)).in_stage("train-tts"));
                }
                Some(m)
            }
            None => None,
        };
        let name = match (&args.name, &args.resume) {
            (Some(n), _) => n.clone(),
            (None, Some(p)) => format!("{}_refined", stem(p)),
            (None, None) => format!("tts_{}", args.arch),
        };
        let mut cfg = self.config.tts.clone();
        cfg.epochs = args.epochs.unwrap_or(if resumed.is_some() { self.config.refine_epochs } else { cfg.epochs });
        let mut inputs = self.dataset_inputs(&args.manifest).map_err(|e| e.in_stage("train-tts"))?;
        if let Some(d) = &args.durations {
            inputs.insert("durations".into(), hash_file(d)?);
        }
        if let Some(r) = &args.resume {
            inputs.insert("resume".into(), hash_file(r)?);
        }
        let stage = format!("train-tts/{name}");
        let echo = (args.arch, &cfg, &self.config.thresholds);
        self.gated(&stage, &echo, inputs, || {
            let _lock = DirLock::acquire(&self.ws.models_dir())?;
            let dataset = self.tts_dataset(&args.manifest, args.durations.as_deref())?;
            let (model, tr) = train_tts(args.arch, &dataset, &cfg, &self.table, resumed)?;
            let path = self.ws.model(&name);
            model.save(&path)?;
            let mses = self.pool.install(|| dataset.par_iter().map(|ex| model.evaluate(ex)).collect::<Result<Vec<_>>>())?;
            let mse = mean(&mses);
            let mut metrics = BTreeMap::from([("mse".to_string(), mse)]);
            let mut warnings = Vec::new();
            bar(&mut warnings, "TTS feature MSE", mse, self.config.thresholds.mse, false);
            if args.arch == TtsArch::Tacotron2 {
                let diags = self.pool.install(|| {
                    dataset
                        .par_iter()
                        .map(|ex| attention_alignment(&model.teacher_forced_alignments(ex)?[0][0]))
                        .collect::<Result<Vec<_>>>()
                })?;
                let diag = mean(&diags);
                bar(&mut warnings, "TTS diagonality", diag, self.config.thresholds.diagonality, true);
                metrics.insert("diagonality".into(), diag);
            }
            let summary = TrainSummary {
                model: path.clone(),
                utterances: dataset.len(),
                epochs: model.epochs_trained,
                final_loss: tr.final_loss(),
                metrics,
                warnings,
            };
            Ok((summary, vec![path]))
        })
    }

    /// Phoneme durations from a Transformer's attention, written to
    /// `durations/{manifest}.txt`. Degenerate utterances get a note in the
    /// manifest itself.
    pub fn extract_durations(&self, model_path: &Path, manifest_path: &Path) -> Result<Staged<DurationsSummary>> {
        let mut inputs = self.dataset_inputs(manifest_path).map_err(|e| e.in_stage("extract-durations"))?;
        inputs.insert("model".into(), hash_file(model_path).map_err(|e| e.in_stage("extract-durations"))?);
        let name = stem(manifest_path);
        let stage = format!("extract-durations/{name}");
        self.gated(&stage, &self.config.duration_selection, inputs, || {
            let model = TtsModel::load(model_path, &self.table)?;
            let dataset = self.tts_dataset(manifest_path, None)?;
            let rep = self.pool.install(|| extract_durations(&model, &dataset, self.config.duration_selection))?;
            let path = self.ws.path(format!("durations/{name}.txt"));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(&path, write_durations(&rep.sequences)).map_err(|e| Error::io(&path, e))?;
            let mut manifest = CorpusManifest::read(manifest_path)?;
            let mut changed = false;
            for e in &mut manifest.entries {
                let flagged = rep.degenerate.contains(&e.utterance_id);
                let has = e.notes.iter().any(|n| n == DEGENERATE_NOTE);
                if flagged != has {
                    changed = true;
                    if flagged {
                        e.notes.push(DEGENERATE_NOTE.into());
                    } else {
                        e.notes.retain(|n| n != DEGENERATE_NOTE);
                    }
                }
            }
            if changed {
                manifest.write(manifest_path)?;
            }
            let summary = DurationsSummary {
                path: path.clone(),
                utterances: rep.sequences.len(),
                layer: rep.layer,
                head: rep.head,
                score: rep.score,
                degenerate: rep.degenerate,
            };
            Ok((summary, vec![path]))
        })
    }

    /// Grows a manifest by code-switched utterances synthesized with
    /// `model_path`. Without `sentences`, they are generated from the
    /// manifest's English transcripts and saved beside the result.
    pub fn augment(&self, model_path: &Path, manifest_path: &Path, sentences: Option<&Path>) -> Result<Staged<AugmentSummary>> {
        let name = stem(manifest_path);
        let sentences_file = match sentences {
            Some(p) => p.to_path_buf(),
            None => self.ws.path(format!("augment/{name}.sentences.txt")),
        };
        let prep = || -> Result<BTreeMap<String, String>> {
            if sentences.is_none() {
                let manifest = CorpusManifest::read(manifest_path)?;
                let en: Vec<String> = manifest
                    .entries
                    .iter()
                    .filter(|e| e.language == Language::En)
                    .map(|e| e.transcript.clone())
                    .collect();
                let mut text: Vec<String> = Vec::new();
                for k in 0..self.config.augment.variants.max(1) as u64 {
                    let seed = self.config.seed.wrapping_add(k);
                    let (batch, _) = generate_code_switched(&en, &self.lexicon, self.config.augment.rate, seed)?;
                    for s in batch {
                        if !text.contains(&s) {
                            text.push(s);
                        }
                    }
                }
                if self.config.augment.max_sentences > 0 {
                    text.truncate(self.config.augment.max_sentences);
                }
                log::info!("generated {} code-switched sentences from {} English ones", text.len(), en.len());
                if let Some(dir) = sentences_file.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                let mut body = text.join("\n");
                if !body.is_empty() {
                    body.push('\n');
                }
                std::fs::write(&sentences_file, body).map_err(|e| Error::io(&sentences_file, e))?;
            }
            let mut inputs = self.dataset_inputs(manifest_path)?;
            inputs.insert("model".into(), hash_file(model_path)?);
            inputs.insert("sentences".into(), hash_file(&sentences_file)?);
            Ok(inputs)
        };
        let inputs = prep().map_err(|e| e.in_stage("augment"))?;
        let stage = format!("augment/{name}");
        let echo = (&self.config.augment, self.config.seed);
        self.gated(&stage, &echo, inputs, || {
            let model = TtsModel::load(model_path, &self.table)?;
            let text = std::fs::read_to_string(&sentences_file).map_err(|e| Error::io(&sentences_file, e))?;
            let lines: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            let manifest = self.read_manifest(manifest_path)?;
            let speaker = manifest.entries.first().map(|e| e.speaker_id.clone()).unwrap_or_default();
            let prefix = format!("cs_{name}_");
            let (added, rep) = self
                .pool
                .install(|| augment_with_code_switch(&model, &lines, &self.lexicon, &self.table, &[], &prefix))?;
            let out_path = self.ws.path(format!("augment/{name}.jsonl"));
            let (in_dir, out_dir) = (manifest_dir(manifest_path), manifest_dir(&out_path));
            let mut entries: Vec<ManifestEntry> = manifest
                .entries
                .iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.features_path = Some(rel_string(&self.lpcnet_path(&in_dir, &e), &out_dir));
                    e.audio_path = rel_string(&resolve(&in_dir, &e.audio_path), &out_dir);
                    e
                })
                .collect();
            let before = entries.len();
            let mut outputs = Vec::new();
            for ex in &added {
                let i: usize = ex.utterance_id[prefix.len()..].parse().expect("ids carry the sentence index");
                let feat = out_dir.join(format!("features/{}.lpcnet", ex.utterance_id));
                if let Some(dir) = feat.parent() {
                    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                }
                ex.target.save(&feat)?;
                let mut notes = vec!["synthesized code-switched sentence".to_string()];
                if rep.truncated.contains(&ex.utterance_id) {
                    notes.push("decoder hit the frame cap".into());
                }
                entries.push(ManifestEntry {
                    utterance_id: ex.utterance_id.clone(),
                    audio_path: String::new(),
                    transcript: lines[i].clone(),
                    language: Language::Cs,
                    speaker_id: speaker.clone(),
                    synthetic: true,
                    features_path: Some(rel_string(&feat, &out_dir)),
                    notes,
                });
                outputs.push(feat);
            }
            let after = entries.len();
            CorpusManifest::new(entries).write(&out_path)?;
            for (i, why) in &rep.skipped {
                log::warn!("sentence {i} skipped: {why}");
            }
            log::info!("augment: {before} -> {after} utterances, {} skipped", rep.skipped.len());
            outputs.push(out_path.clone());
            let summary = AugmentSummary {
                manifest: out_path,
                sentences_file: sentences_file.clone(),
                before,
                after,
                added: rep.added,
                skipped: rep.skipped,
                truncated: rep.truncated,
            };
            Ok((summary, outputs))
        })
    }

    /// Synthesizes each (possibly code-switched) sentence and renders it,
    /// writing `{out_dir}/{index:03}.wav` and its features.
    pub fn synthesize(&self, model_path: &Path, sentences: &[String], out_dir: Option<&Path>) -> Result<SynthesisSummary> {
        let run = || {
            let model = TtsModel::load(model_path, &self.table)?;
            let dir = out_dir.map(Path::to_path_buf).unwrap_or_else(|| self.ws.path("synth"));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let results: Vec<Result<(PathBuf, PathBuf, bool)>> = self.pool.install(|| {
                sentences
                    .par_iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let phonemes = tokenize_mixed(s, &self.lexicon, &self.table)?;
                        let out = synthesize(&model, &phonemes, &SynthesisOptions::default())?;
                        let mut spec = self.config.vocoder.clone();
                        spec.seed = spec.seed.wrapping_add(i as u64);
                        let clip = render(&out.features, &spec)?;
                        let feat = dir.join(format!("{i:03}.lpcnet"));
                        let wav = dir.join(format!("{i:03}.wav"));
                        out.features.save(&feat)?;
                        clip.write_wav(&wav)?;
                        Ok((wav, feat, out.truncated))
                    })
                    .collect()
            });
            let mut summary = SynthesisSummary::default();
            for (i, r) in results.into_iter().enumerate() {
                let (wav, feat, truncated) = r.map_err(|e| Error::Data(format!("sentence {i}: {e}")))?;
                if truncated {
                    log::warn!("sentence {i}: decoding hit the frame cap");
                    summary.truncated.push(i);
                }
                summary.wavs.push(wav);
                summary.features.push(feat);
            }
            let inputs = BTreeMap::from([
                ("model".to_string(), hash_file(model_path)?),
                ("text".to_string(), super::workspace::sha256_hex(sentences.join("\n").as_bytes())),
            ]);
            let digest = stage_digest(&self.config.vocoder, &inputs)?;
            self.ws.record("synthesize", self.config.seed, &self.config.vocoder, inputs, &digest, &summary.wavs, serde_json::to_value(&summary)?)?;
            Ok(summary)
        };
        run().map_err(|e: Error| e.in_stage("synthesize"))
    }
}
