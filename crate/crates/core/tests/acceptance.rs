//! End-to-end acceptance suite. Each test prints one `PASS`/`FAIL` line with
//! its measurements, then asserts.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cstts::attention::{attention_step, raw_step_graph, AttentionState, GmmAttention, RawMixture, SCALE_EPS};
use cstts::decoder::DecoderConfig;
use cstts::dsp::{
    extract_logf0, extract_lpcnet_features, extract_mfcc, fit_f0_stats, normalize_logf0, AudioClip, FeatureConfig,
    FeatureKind, FeatureTrack, LPCNET_DIM,
};
use cstts::model_io::FeatureNormalizer;
use cstts::nn::{check_gradients, jitter, seeded_rng, Graph, Mat, ParamStore};
use cstts::pipeline::{CorpusManifest, Pipeline, PipelineConfig, TrainTtsArgs};
use cstts::ppg::{downsample_ppg, extract_ppg, PpgConfig, PpgModel};
use cstts::text::{tokenize_mandarin, tokenize_mixed, BilingualLexicon, PhonemeSequence, SymbolTable, TokenTag};
use cstts::tts::duration::{durations_from_alignment, length_regulate, read_durations};
use cstts::tts::{extract_durations, synthesize, SynthesisOptions, TtsArch, TtsConfig, TtsExample, TtsModel};
use cstts::vc::{VcConfig, VcExample, VcModel};
use cstts::vocoder::{render, VocoderSpec};

const CASES: usize = 200;

/// Writes straight to the process stdout so the line shows even when the
/// harness captures test output.
fn verdict(criterion: u32, name: &str, ok: bool, detail: &str, elapsed: Duration) {
    let line = format!(
        "criterion {criterion} [{name}]: {} ({detail}; {:.1}s)\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

/// Collects failures of named checks instead of stopping at the first one.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, name: &str, ok: bool, detail: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(format!("{name}: {}", detail()));
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn finish(self, criterion: u32, name: &str, start: Instant, limit: Duration) {
        let elapsed = start.elapsed();
        let mut failures = self.failures;
        if elapsed > limit {
            failures.push(format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()));
        }
        let detail = if failures.is_empty() { self.notes.join(", ") } else { failures.join("; ") };
        verdict(criterion, name, failures.is_empty(), &detail, elapsed);
        assert!(failures.is_empty(), "{}", failures.join("\n"));
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed)
}

fn pinyin_table_rows() -> Vec<(String, Option<String>, String)> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/pinyin_syllables.tsv");
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 3, "{l}");
            let initial = (f[1] != "-").then(|| f[1].to_string());
            (f[0].to_string(), initial, f[2].to_string())
        })
        .collect()
}

fn toy_tts_config() -> TtsConfig {
    TtsConfig {
        embed: 4,
        conv_filters: 3,
        enc_units: 2,
        decoder: DecoderConfig { prenet: 3, rnn: 3, mixtures: 2, postnet_filters: 3, ..DecoderConfig::default() },
        model_dim: 4,
        heads: 2,
        layers: 1,
        ffn: 5,
        dur_filters: 3,
        prenet: 3,
        postnet_filters: 3,
        epochs: 1,
        seed: 9,
        ..TtsConfig::default()
    }
}

fn toy_tts(arch: TtsArch, table: &SymbolTable) -> TtsModel {
    TtsModel::new(arch, toy_tts_config(), table, FeatureNormalizer::identity(LPCNET_DIM), 0.01, 0.5).unwrap()
}

fn random_pinyin(r: &mut ChaCha8Rng, rows: &[(String, Option<String>, String)], words: std::ops::Range<usize>) -> String {
    (0..r.gen_range(words))
        .map(|_| format!("{}{}", rows.choose(r).unwrap().0, r.gen_range(1..=5)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn lpcnet_target(r: &mut ChaCha8Rng, frames: usize) -> FeatureTrack {
    let m = Array2::from_shape_fn((frames, LPCNET_DIM), |_| r.gen_range(-1.0..1.0));
    FeatureTrack::new(m, 0.01, FeatureKind::Lpcnet).unwrap()
}

fn harmonic(f0: f64, secs: f64) -> AudioClip {
    let n = (secs * 16_000.0) as usize;
    AudioClip::from_clamped((0..n).map(|i| {
        let t = i as f64 / 16_000.0;
        (1..=8).map(|h| (std::f64::consts::TAU * f0 * h as f64 * t).sin() / h as f64).sum::<f64>() * 0.2
    }))
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_invariant_suites() {
    let start = Instant::now();
    let mut c = Checks::default();
    let fc = FeatureConfig::default();

    // frame-count law for every extractor
    let mut r = rng(101);
    let mut bad = 0;
    for _ in 0..CASES {
        let n = r.gen_range(fc.frame_len..8_000);
        let clip = AudioClip::from_clamped((0..n).map(|_| r.gen_range(-0.5..0.5)));
        let want = n.div_ceil(fc.hop);
        let got = [
            extract_mfcc(&clip, &fc).unwrap().num_frames(),
            extract_logf0(&clip, &fc).unwrap().num_frames(),
            extract_lpcnet_features(&clip, &fc).unwrap().num_frames(),
        ];
        bad += got.iter().filter(|&&g| g != want).count();
    }
    c.check("frame-count law", bad == 0, || format!("{bad} mismatches"));

    // PPG rows on the simplex, before and after pooling
    let mut r = rng(102);
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    let mut length_errors = 0;
    for i in 0..CASES {
        let cfg = PpgConfig { hidden: 6, senones: r.gen_range(2..40), layers: r.gen_range(1..3), seed: i as u64, ..PpgConfig::default() };
        let model = PpgModel::new(cfg, FeatureNormalizer::identity(13)).unwrap();
        let frames = r.gen_range(1..60);
        let mfcc = Array2::from_shape_fn((frames, 13), |_| r.gen_range(-20.0..20.0));
        let mfcc = FeatureTrack::new(mfcc, 0.01, FeatureKind::Mfcc).unwrap();
        let ppg = extract_ppg(&model, &mfcc).unwrap();
        let factor = r.gen_range(1..5);
        let pooled = downsample_ppg(&ppg, factor).unwrap();
        if pooled.num_frames() != frames.div_ceil(factor) {
            length_errors += 1;
        }
        for t in [&ppg, &pooled] {
            for row in t.data().rows() {
                worst = worst.max((row.sum() - 1.0).abs());
                negative += row.iter().filter(|&&v| v < 0.0).count();
            }
        }
    }
    c.check("PPG simplex", worst <= 1e-5 && negative == 0 && length_errors == 0, || {
        format!("max |sum-1| {worst:.2e}, {negative} negatives, {length_errors} length errors")
    });

    // pooled z-scored voiced log-F0 has mean 0 and std 1
    let mut r = rng(103);
    let (mut worst_mean, mut worst_std): (f64, f64) = (0.0, 0.0);
    for _ in 0..CASES {
        let centre: f64 = r.gen_range(80f64..300.0).ln();
        let tracks: Vec<FeatureTrack> = (0..r.gen_range(1..5))
            .map(|_| {
                let n = r.gen_range(2..80);
                let col = Array2::from_shape_fn((n, 1), |(i, _)| {
                    if i < 2 || r.gen_bool(0.7) {
                        centre + r.gen_range(-0.5..0.5)
                    } else {
                        f64::NAN
                    }
                });
                FeatureTrack::new(col, 0.01, FeatureKind::LogF0).unwrap()
            })
            .collect();
        let stats = fit_f0_stats("s", &tracks).unwrap();
        let mut z = Vec::new();
        for t in &tracks {
            let norm = normalize_logf0(t, &stats).unwrap();
            for (raw, v) in t.data().iter().zip(norm.data()) {
                if !raw.is_nan() {
                    z.push(*v);
                }
            }
        }
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let std = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    c.check("F0 normalization", worst_mean < 1e-6 && worst_std < 1e-6, || {
        format!("max |mean| {worst_mean:.2e}, max |std-1| {worst_std:.2e}")
    });

    // attention means never move backwards over 100 random steps
    let mut r = rng(104);
    let mut backwards = 0;
    for _ in 0..CASES {
        let k = r.gen_range(1..7);
        let t = r.gen_range(1..40);
        let mem = Array2::from_shape_fn((t, 3), |_| r.gen_range(-1.0..1.0));
        let mut st = AttentionState::initial(k, 3);
        for _ in 0..100 {
            let spread: f64 = if r.gen_bool(0.1) { 800.0 } else { 8.0 };
            let raw = RawMixture {
                weights: (0..k).map(|_| r.gen_range(-spread..spread)).collect(),
                deltas: (0..k).map(|_| r.gen_range(-spread..spread)).collect(),
                scales: (0..k).map(|_| r.gen_range(-spread..spread)).collect(),
            };
            let (_, _, next) = attention_step(&st, &raw, &mem).unwrap();
            backwards += next.means.iter().zip(&st.means).filter(|(a, b)| a < b).count();
            st = next;
        }
    }
    c.check("GMM mean monotonicity", backwards == 0, || format!("{backwards} backward moves"));

    // durations sum to the decoder frame count, for random matrices and for
    // a Transformer's teacher-forced attention
    let mut r = rng(105);
    let mut violations = 0;
    for _ in 0..CASES {
        let (frames, phones) = (r.gen_range(1..80), r.gen_range(1..30));
        let a = Array2::from_shape_fn((frames, phones), |_| r.gen_range(0.0..1.0));
        if durations_from_alignment(&a).unwrap().iter().sum::<usize>() != frames {
            violations += 1;
        }
    }
    let table = SymbolTable::canonical();
    let lex = BilingualLexicon::demo();
    let rows = pinyin_table_rows();
    let tr = toy_tts(TtsArch::Transformer, &table);
    let data: Vec<TtsExample> = (0..20)
        .map(|i| {
            let phonemes = tokenize_mandarin(&random_pinyin(&mut r, &rows, 1..4), &lex, &table).unwrap();
            let frames = r.gen_range(1..30);
            let target = lpcnet_target(&mut r, frames);
            TtsExample { utterance_id: format!("u{i}"), phonemes, target, durations: None }
        })
        .collect();
    let rep = extract_durations(&tr, &data, 0).unwrap();
    for (s, e) in rep.sequences.iter().zip(&data) {
        if s.total() != e.target.num_frames() || s.durations.len() != e.phonemes.len() {
            violations += 1;
        }
    }
    c.check("duration conservation", violations == 0, || format!("{violations} violations"));

    // FastSpeech output length is the duration sum, zeros included
    let mut r = rng(106);
    let fs = toy_tts(TtsArch::FastSpeech, &table);
    let mut wrong = 0;
    for _ in 0..CASES {
        let seq = tokenize_mandarin(&random_pinyin(&mut r, &rows, 1..5), &lex, &table).unwrap();
        let mut d: Vec<usize> = (0..seq.len()).map(|_| if r.gen_bool(0.3) { 0 } else { r.gen_range(1..7) }).collect();
        if d.iter().all(|&x| x == 0) {
            d[0] = 1;
        }
        let total: usize = d.iter().sum();
        let x = Array2::from_shape_fn((d.len(), 2), |(i, j)| (i * 2 + j) as f64);
        let out = synthesize(&fs, &seq, &SynthesisOptions { durations: Some(d.clone()), ..SynthesisOptions::default() }).unwrap();
        if out.features.num_frames() != total || length_regulate(&x, &d).nrows() != total {
            wrong += 1;
        }
    }
    c.check("length-regulator law", wrong == 0, || format!("{wrong} wrong lengths"));

    // exactly one EOS, last, in mixed text with punctuation
    let mut r = rng(107);
    let en: Vec<String> = lex.en_entries.keys().cloned().collect();
    let mut broken = 0;
    for _ in 0..CASES {
        let text: Vec<String> = (0..r.gen_range(0..8))
            .map(|_| {
                let w = if r.gen_bool(0.5) { en.choose(&mut r).unwrap().clone() } else { random_pinyin(&mut r, &rows, 1..2) };
                let p = ["", "", ",", ";", ":", ".", "!", "?"].choose(&mut r).unwrap();
                format!("{w}{p}")
            })
            .collect();
        let seq: PhonemeSequence = tokenize_mixed(&text.join(" "), &lex, &table).unwrap();
        let eos = table.eos_id();
        let ok = seq.ids.iter().filter(|&&i| i == eos).count() == 1
            && seq.ids.last() == Some(&eos)
            && seq.tags.last() == Some(&TokenTag::Eos)
            && seq.tags.len() == seq.ids.len();
        broken += usize::from(!ok);
    }
    c.check("EOS uniqueness", broken == 0, || format!("{broken} sequences"));

    c.note(format!("7 suites x {CASES} cases"));
    c.finish(1, "invariant suites", start, Duration::from_secs(300));
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_gradient_checks() {
    let start = Instant::now();
    let mut c = Checks::default();
    let h = 1e-6;
    let tol = 1e-4;
    let mut r = rng(201);

    let x = Array2::from_shape_fn((4, 3), |_| r.gen_range(-1.0..1.0));
    let labels = [0, 2, 3, 1];
    let cfg = PpgConfig { layers: 2, hidden: 3, senones: 4, input_dim: 3, seed: 3, ..PpgConfig::default() };
    let ppg = PpgModel::new(cfg, FeatureNormalizer::identity(3)).unwrap();
    let mut g = Graph::new();
    let l = ppg.loss(&mut g, ppg.params(), &x, &labels);
    let grads = g.backward(l);
    let rep = check_gradients(ppg.params(), &grads, h, |p| {
        let mut g = Graph::new();
        let l = ppg.loss(&mut g, p, &x, &labels);
        g.scalar(l)
    });
    let mut results = vec![("ppg cross-entropy".to_string(), rep)];

    let vc_cfg = VcConfig {
        ppg_dim: 4,
        embed: 4,
        conv_filters: 3,
        enc_units: 2,
        decoder: DecoderConfig { prenet: 3, rnn: 3, mixtures: 2, postnet_filters: 3, ..DecoderConfig::default() },
        epochs: 1,
        seed: 4,
        ..VcConfig::default()
    };
    let mut vc = VcModel::new(vc_cfg, "a", FeatureNormalizer::identity(LPCNET_DIM)).unwrap();
    jitter(vc.params_mut(), 0.1, &mut r);
    let mut ppg_rows = Array2::from_shape_fn((3, 4), |_| r.gen_range(0.0..1.0));
    for mut row in ppg_rows.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let ex = VcExample {
        utterance_id: "u".into(),
        speaker_id: "a".into(),
        ppg: FeatureTrack::new(ppg_rows, 0.02, FeatureKind::Ppg).unwrap(),
        logf0: (0..3).map(|_| r.gen_range(-1.0..1.0)).collect(),
        target: lpcnet_target(&mut r, 4),
    };
    let mut g = Graph::new();
    let (_, l) = vc.loss_graph(&mut g, vc.params(), &ex);
    let grads = g.backward(l);
    let rep = check_gradients(vc.params(), &grads, h, |p| {
        let mut g = Graph::new();
        let (_, l) = vc.loss_graph(&mut g, p, &ex);
        g.scalar(l)
    });
    results.push(("vc loss".into(), rep));

    let table = SymbolTable::canonical();
    let phonemes = tokenize_mandarin("ni3 hao3", &BilingualLexicon::demo(), &table).unwrap();
    let target = lpcnet_target(&mut r, 5).data().clone();
    let durations = vec![1, 1, 1, 1, 1];
    assert_eq!(phonemes.len(), durations.len());
    for arch in TtsArch::ALL {
        let mut m = toy_tts(arch, &table);
        jitter(m.params_mut(), 0.1, &mut r);
        let ids = &phonemes.ids;
        let d = Some(durations.as_slice());
        let mut g = Graph::new();
        let tf = m.teacher_forced(&mut g, m.params(), ids, &target, d).unwrap();
        let grads = g.backward(tf.loss);
        let rep = check_gradients(m.params(), &grads, h, |p| {
            let mut g = Graph::new();
            let tf = m.teacher_forced(&mut g, p, ids, &target, d).unwrap();
            g.scalar(tf.loss)
        });
        results.push((format!("{arch} loss"), rep));
    }

    // learned projection plus the raw mixture parameters, over two steps
    let (t, k, qd) = (7, 3, 4);
    let mut store = ParamStore::new();
    let att = GmmAttention::new(&mut store, "att", qd, k, 1.0, 1.0, &mut r);
    let raw_id = store.add("raw", Mat::from_shape_fn((1, 3 * k), |_| r.gen_range(-1.0..1.0)));
    let mem = Mat::from_shape_fn((t, 2), |_| r.gen_range(-1.0..1.0));
    let q: Vec<f64> = (0..qd).map(|_| r.gen_range(-1.0..1.0)).collect();
    let probe = Mat::from_shape_fn((1, t), |_| r.gen_range(-1.0..1.0));
    let loss = |s: &ParamStore, g: &mut Graph| {
        let qv = g.row(&q);
        let m0 = g.row(&[0.5, 2.0, 3.0]);
        let memv = g.constant(mem.clone());
        let pos = att.positions(g, t);
        let s1 = att.step_graph(g, s, qv, m0, memv, pos);
        let raw = g.param(s, raw_id);
        let s2 = raw_step_graph(g, raw, s1.means, memv, pos, k);
        let pw = g.constant(probe.clone());
        let a = g.mul(s2.weights, pw);
        let (sa, sc) = (g.sum(a), g.sum(s1.context));
        g.add(sa, sc)
    };
    let mut g = Graph::new();
    let l = loss(&store, &mut g);
    let grads = g.backward(l);
    let rep = check_gradients(&store, &grads, h, |s| {
        let mut g = Graph::new();
        let l = loss(s, &mut g);
        g.scalar(l)
    });
    results.push(("gmm attention".into(), rep));

    for (name, rep) in &results {
        c.check(name, rep.max_rel_error < tol, || format!("rel error {:.2e} at {}", rep.max_rel_error, rep.worst_param));
    }
    let worst = results.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    c.note(format!("{} losses, worst rel error {worst:.2e}", results.len()));
    c.finish(2, "gradient checks", start, Duration::from_secs(120));
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_overfit_experiments() {
    let start = Instant::now();
    let mut c = Checks::default();
    let limit = Duration::from_secs(15 * 60);
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default().with_seed(7);
    let p = Pipeline::new(dir.path(), cfg).unwrap();
    let corpus = p.make_synthetic_corpus().unwrap().report;
    c.check("corpus size", corpus.utterances == 10, || format!("{} utterances", corpus.utterances));
    let m = p.ws.corpus_manifest();
    p.prepare(&m).unwrap().ensure_ok().unwrap();

    let timed = |name: &str, run: &mut dyn FnMut() -> BTreeMap<String, f64>| {
        let t = Instant::now();
        let metrics = run();
        let secs = t.elapsed();
        (metrics, secs, name.to_string())
    };

    let mut lines = Vec::new();
    let (met, secs, name) = timed("ppg", &mut || p.train_ppg(&m, None).unwrap().report.metrics);
    let acc = met["frame_accuracy"];
    c.check("ppg accuracy", acc >= 0.99, || format!("{acc:.4}"));
    lines.push((name, secs));
    c.note(format!("ppg acc {acc:.4}"));

    for s in &corpus.speakers {
        let (met, secs, name) = timed(&format!("vc {s}"), &mut || p.train_vc(&m, s).unwrap().report.metrics);
        let (mse, diag) = (met["mse"], met["diagonality"]);
        c.check(&name, mse < 0.05 && diag >= 0.9, || format!("mse {mse:.4} diagonality {diag:.3}"));
        c.note(format!("{name} mse {mse:.4} diag {diag:.3}"));
        lines.push((name, secs));
    }

    let true_durations = p.ws.corpus_dir().join("durations.txt");
    for arch in TtsArch::ALL {
        let mut args = TrainTtsArgs::new(arch, &m);
        if arch == TtsArch::FastSpeech {
            args.durations = Some(true_durations.clone());
        }
        let (met, secs, name) = timed(&format!("{arch}"), &mut || p.train_tts(&args).unwrap().report.metrics);
        let mse = met["mse"];
        c.check(&name, mse < 0.05, || format!("mse {mse:.4}"));
        c.note(format!("{name} mse {mse:.4}"));
        lines.push((name, secs));
    }
    for (name, secs) in &lines {
        c.check(name, *secs <= limit, || format!("took {:.0}s", secs.as_secs_f64()));
    }
    c.finish(3, "overfit experiments", start, limit * lines.len() as u32);
}

// ---------------------------------------------------------------- 4

const TEST_SENTENCES: [&str; 3] = ["music ni3 hao3", "yin1 yue4 dog", "tea love"];

fn full_run(root: &Path, c: &mut Checks) {
    let p = Pipeline::new(root, PipelineConfig::default().with_seed(5)).unwrap();
    let corpus = p.make_synthetic_corpus().unwrap().report;
    let m = p.ws.corpus_manifest();
    let source = CorpusManifest::read(&m).unwrap();
    c.check("two speakers", corpus.speakers.len() == 2, || format!("{:?}", corpus.speakers));
    let languages: BTreeSet<String> = source.entries.iter().map(|e| format!("{:?}", e.language)).collect();
    c.check("two languages", languages.len() == 2, || format!("{languages:?}"));

    p.prepare(&m).unwrap().ensure_ok().unwrap();
    p.train_ppg(&m, None).unwrap();
    for s in &corpus.speakers {
        p.train_vc(&m, s).unwrap();
    }

    let bi = p.build_bilingual(&m).unwrap();
    for sp in &bi.speakers {
        let got: BTreeSet<String> =
            CorpusManifest::read(&sp.manifest).unwrap().entries.iter().map(|e| e.utterance_id.clone()).collect();
        let want: BTreeSet<String> = source
            .entries
            .iter()
            .map(|e| {
                if e.speaker_id == sp.speaker {
                    e.utterance_id.clone()
                } else {
                    format!("{}_as_{}", e.utterance_id, sp.speaker)
                }
            })
            .collect();
        c.check(&format!("bilingual {}", sp.speaker), got == want, || format!("{got:?} vs {want:?}"));
    }

    let en = bi.speakers.iter().find(|s| s.speaker == "spk_en").unwrap().manifest.clone();
    let tr = p.train_tts(&TrainTtsArgs::new(TtsArch::Transformer, &en)).unwrap().report;
    let durs = p.extract_durations(&tr.model, &en).unwrap().report;
    let seqs = read_durations(&std::fs::read_to_string(&durs.path).unwrap()).unwrap();
    let bim = CorpusManifest::read(&en).unwrap();
    let mut off = 0;
    for (s, e) in seqs.iter().zip(&bim.entries) {
        let path = en.parent().unwrap().join(e.features_path.as_ref().unwrap());
        off += usize::from(s.total() != FeatureTrack::load(path).unwrap().num_frames());
    }
    c.check("duration sums", off == 0 && seqs.len() == bim.entries.len(), || format!("{off} mismatched"));

    let aug = p.augment(&tr.model, &en, None).unwrap().report;
    let grown = CorpusManifest::read(&aug.manifest).unwrap().entries.len();
    c.check("augment growth", aug.after == aug.before + aug.added.len() && grown == aug.after && !aug.added.is_empty(), || {
        format!("before {} added {} after {} written {grown}", aug.before, aug.added.len(), aug.after)
    });

    let taco = p.train_tts(&TrainTtsArgs::new(TtsArch::Tacotron2, &en)).unwrap().report;
    let refine = TrainTtsArgs { resume: Some(taco.model.clone()), ..TrainTtsArgs::new(TtsArch::Tacotron2, &aug.manifest) };
    let refined = p.train_tts(&refine).unwrap().report;
    c.check("refinement resumes", refined.epochs == taco.epochs + p.config.refine_epochs, || {
        format!("{} epochs after {}", refined.epochs, taco.epochs)
    });

    let sentences: Vec<String> = TEST_SENTENCES.iter().map(|s| s.to_string()).collect();
    let out = p.synthesize(&refined.model, &sentences, None).unwrap();
    c.check("one wav per sentence", out.wavs.len() == sentences.len(), || format!("{} wavs", out.wavs.len()));
    for w in &out.wavs {
        let spec = hound::WavReader::open(w).unwrap().spec();
        let clip = AudioClip::read_wav(w).unwrap();
        c.check("playable wav", spec.sample_rate == 16_000 && spec.bits_per_sample == 16 && spec.channels == 1 && !clip.is_empty(), || {
            format!("{}: {spec:?}", w.display())
        });
    }
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn criterion_4_pipeline_end_to_end() {
    let start = Instant::now();
    let mut c = Checks::default();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    full_run(&a, &mut c);
    let first = start.elapsed();
    full_run(&b, &mut c);

    let (fa, fb) = (files_under(&a), files_under(&b));
    c.check("same file set", fa.keys().eq(fb.keys()), || "file lists differ".into());
    let mut differing = Vec::new();
    let mut prefixed = 0;
    for (rel, x) in &fa {
        let Some(y) = fb.get(rel) else { continue };
        if x == y {
            continue;
        }
        // run records may embed the workspace root
        let strip = |bytes: &[u8], root: &Path| String::from_utf8_lossy(bytes).replace(&*root.to_string_lossy(), "<ws>");
        if strip(x, &a) == strip(y, &b) {
            prefixed += 1;
        } else {
            differing.push(rel.display().to_string());
        }
    }
    c.check("deterministic", differing.is_empty(), || format!("differ: {differing:?}"));
    c.note(format!("{} files identical across two runs ({prefixed} up to the workspace path)", fa.len()));
    c.note(format!("one run {:.0}s", first.as_secs_f64()));
    c.finish(4, "pipeline end to end", start, Duration::from_secs(45 * 60));
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_oracle_equivalences() {
    let start = Instant::now();
    let mut c = Checks::default();
    let table = SymbolTable::canonical();
    let lex = BilingualLexicon::demo();

    // every table syllable with every tone, plus strings outside the table
    let rows = pinyin_table_rows();
    let mut mismatches = Vec::new();
    for (syl, initial, fin) in &rows {
        for tone in 1..=5 {
            let mut want: Vec<String> = initial.iter().map(|i| format!("zh:{i}")).collect();
            want.push(format!("zh:{fin}{tone}"));
            want.push("<eos>".into());
            let got = tokenize_mandarin(&format!("{syl}{tone}"), &lex, &table)
                .map(|s| s.symbols(&table).into_iter().map(String::from).collect::<Vec<_>>());
            if got.as_ref().ok() != Some(&want) {
                mismatches.push(format!("{syl}{tone}"));
            }
        }
    }
    let known: BTreeSet<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    let mut r = rng(501);
    let mut accepted = Vec::new();
    let mut outside = 0;
    while outside < CASES {
        let len = r.gen_range(1..7);
        let s: String = (0..len).map(|_| r.gen_range(b'a'..=b'z') as char).collect();
        if known.contains(s.as_str()) {
            continue;
        }
        outside += 1;
        if tokenize_mandarin(&format!("{s}3"), &lex, &table).is_ok() {
            accepted.push(s);
        }
    }
    c.check("pinyin segmentation", mismatches.is_empty() && accepted.is_empty(), || {
        format!("mismatched {mismatches:?}, wrongly accepted {accepted:?}")
    });
    c.note(format!("{} syllables x 5 tones", rows.len()));

    // brute-force argmax counting, including quantized rows with ties
    let mut r = rng(502);
    let mut differ = 0;
    for case in 0..1000 {
        let (frames, phones) = (r.gen_range(1..60), r.gen_range(1..25));
        let levels = if case % 4 == 0 { 3.0 } else { 1e9 };
        let a = Array2::from_shape_fn((frames, phones), |_| (r.gen_range(0.0f64..1.0) * levels).floor() / levels);
        let mut want = vec![0usize; phones];
        for i in 0..frames {
            let mut best = 0;
            for j in 1..phones {
                if a[[i, j]] > a[[i, best]] {
                    best = j;
                }
            }
            want[best] += 1;
        }
        differ += usize::from(durations_from_alignment(&a).unwrap() != want);
    }
    c.check("duration oracle", differ == 0, || format!("{differ}/1000 differ"));

    // z-scores against the direct formula
    let mut r = rng(503);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let n = r.gen_range(3..100);
        let col: Vec<f64> =
            (0..n).map(|i| if i < 2 || r.gen_bool(0.8) { r.gen_range(3.5..6.5) } else { f64::NAN }).collect();
        let voiced: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        let k = voiced.len() as f64;
        let mean = voiced.iter().sum::<f64>() / k;
        let std = (voiced.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k).sqrt();
        let track = FeatureTrack::new(Array2::from_shape_vec((n, 1), col.clone()).unwrap(), 0.01, FeatureKind::LogF0).unwrap();
        let stats = fit_f0_stats("s", std::slice::from_ref(&track)).unwrap();
        let z = normalize_logf0(&track, &stats).unwrap();
        for (raw, got) in col.iter().zip(z.data()) {
            let want = if raw.is_nan() { 0.0 } else { (raw - mean) / std };
            worst = worst.max((got - want).abs());
        }
    }
    c.check("z-score oracle", worst <= 1e-9, || format!("max error {worst:.2e}"));

    // attention weights against direct kernel evaluation
    let mut r = rng(504);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let k = r.gen_range(1..6);
        let t = r.gen_range(1..50);
        let st = AttentionState {
            means: (0..k).map(|_| r.gen_range(0.0..t as f64)).collect(),
            prev_context: vec![0.0; 2],
            step_index: 0,
        };
        let raw = RawMixture {
            weights: (0..k).map(|_| r.gen_range(-4.0..4.0)).collect(),
            deltas: (0..k).map(|_| r.gen_range(-4.0..4.0)).collect(),
            scales: (0..k).map(|_| r.gen_range(-3.0..3.0)).collect(),
        };
        let mem = Array2::from_shape_fn((t, 2), |_| r.gen_range(-1.0..1.0));
        let (got, _, _) = attention_step(&st, &raw, &mem).unwrap();
        let z: f64 = raw.weights.iter().map(|w| w.exp()).sum();
        for (j, g) in got.iter().enumerate() {
            let mut want = 0.0;
            for i in 0..k {
                let w = raw.weights[i].exp() / z;
                let mu = st.means[i] + (1.0 + raw.deltas[i].exp()).ln();
                let sigma = (1.0 + raw.scales[i].exp()).ln() + SCALE_EPS;
                want += w * (-(j as f64 - mu).powi(2) / (2.0 * sigma * sigma)).exp();
            }
            worst = worst.max((g - want).abs());
        }
    }
    c.check("GMM kernel oracle", worst <= 1e-10, || format!("max error {worst:.2e}"));
    c.finish(5, "oracle equivalences", start, Duration::from_secs(300));
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_dsp_fallback_loop() {
    let start = Instant::now();
    let mut c = Checks::default();
    let fc = FeatureConfig::default();
    for f0 in [100.0, 150.0, 200.0, 250.0, 300.0] {
        let src = harmonic(f0, 1.0);
        let feats = extract_lpcnet_features(&src, &fc).unwrap();
        let out = render(&feats, &VocoderSpec::default()).unwrap();
        let lf0 = extract_logf0(&out, &fc).unwrap();
        let voiced: Vec<f64> = lf0.data().column(0).iter().filter(|v| v.is_finite()).map(|v| v.exp()).collect();
        let good = voiced.iter().filter(|f| (*f / f0 - 1.0).abs() <= 0.1).count();
        let share = good as f64 / voiced.len().max(1) as f64;
        c.check(&format!("{f0} Hz"), voiced.len() >= 50 && share >= 0.9, || {
            format!("{good}/{} voiced frames within 10%", voiced.len())
        });
        c.note(format!("{f0:.0} Hz {:.0}%", share * 100.0));
    }
    c.finish(6, "DSP fallback loop", start, Duration::from_secs(300));
}
