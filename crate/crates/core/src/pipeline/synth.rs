//! Seeded source-filter mini-corpus with exact senone labels and durations.
//!
//! Every phoneme maps to an acoustic class shared across languages: its base
//! symbol (namespace and stress/tone digit stripped) is hashed onto one of a
//! few prototypes, each a set of formants with a voicing decision. Speakers
//! differ in F0, spectral tilt and a formant scale. Segments are whole
//! analysis frames long, so frame labels are exact.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{CorpusManifest, Language, ManifestEntry};
use crate::dsp::AudioClip;
use crate::error::{Error, Result};
use crate::ppg::{write_senone_labels, SenoneLabels};
use crate::text::lexicon::split_digit;
use crate::text::symbols::{EOS, PAUSE};
use crate::text::{tokenize_english, tokenize_mandarin, BilingualLexicon, SymbolTable};
use crate::tts::duration::{write_durations, DurationSequence};

pub const SILENCE_SENONE: usize = 0;
const HOP: usize = 160;
const RATE: f64 = 16_000.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoiceSpec {
    pub id: String,
    pub language: Language,
    pub f0_hz: f64,
    /// One-pole low-pass coefficient in `[0, 1)`; larger is darker.
    pub tilt: f64,
    pub formant_scale: f64,
    pub utterances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub voices: Vec<VoiceSpec>,
    /// Size of the senone inventory the labels index into.
    pub senones: usize,
    /// Distinct non-silence prototypes actually used.
    pub acoustic_classes: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub min_phone_frames: usize,
    pub max_phone_frames: usize,
    pub pause_frames: usize,
    pub lead_frames: usize,
    pub tail_frames: usize,
    pub noise: f64,
    /// Seeds the prototype table, independent of the corpus seed.
    pub prototype_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            voices: vec![
                VoiceSpec {
                    id: "spk_en".into(),
                    language: Language::En,
                    f0_hz: 120.0,
                    tilt: 0.55,
                    formant_scale: 1.0,
                    utterances: 5,
                },
                VoiceSpec {
                    id: "spk_zh".into(),
                    language: Language::Zh,
                    f0_hz: 210.0,
                    tilt: 0.25,
                    formant_scale: 1.12,
                    utterances: 5,
                },
            ],
            senones: 488,
            acoustic_classes: 24,
            min_words: 1,
            max_words: 3,
            min_phone_frames: 5,
            max_phone_frames: 8,
            pause_frames: 8,
            lead_frames: 3,
            tail_frames: 6,
            noise: 0.002,
            prototype_seed: 1234,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.voices.is_empty() {
            return Err(Error::Config("synthetic corpus needs at least one voice".into()));
        }
        if self.acoustic_classes == 0 || self.acoustic_classes >= self.senones {
            return Err(Error::Config("acoustic classes must be in 1..senones".into()));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::Config("word counts must satisfy 1 <= min <= max".into()));
        }
        if self.min_phone_frames == 0 || self.min_phone_frames > self.max_phone_frames {
            return Err(Error::Config("phone lengths must satisfy 1 <= min <= max".into()));
        }
        for v in &self.voices {
            if v.language == Language::Cs {
                return Err(Error::Config(format!("voice {} must be monolingual", v.id)));
            }
            if !(50.0..500.0).contains(&v.f0_hz) || !(0.0..1.0).contains(&v.tilt) || v.formant_scale <= 0.0 {
                return Err(Error::Config(format!("voice {} has out-of-range parameters", v.id)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Prototype {
    voiced: bool,
    formants: [(f64, f64, f64); 3],
}

fn prototype(class: usize, seed: u64) -> Prototype {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(class as u64));
    let voiced = rng.gen_bool(0.75);
    let formants = if voiced {
        [
            (rng.gen_range(250.0..900.0), rng.gen_range(60.0..120.0), 1.0),
            (rng.gen_range(900.0..2300.0), rng.gen_range(80.0..160.0), rng.gen_range(0.4..0.9)),
            (rng.gen_range(2300.0..3400.0), rng.gen_range(120.0..240.0), rng.gen_range(0.2..0.5)),
        ]
    } else {
        [
            (rng.gen_range(2000.0..3500.0), rng.gen_range(300.0..600.0), 1.0),
            (rng.gen_range(3500.0..5500.0), rng.gen_range(400.0..800.0), rng.gen_range(0.5..1.0)),
            (rng.gen_range(5500.0..7000.0), rng.gen_range(500.0..900.0), rng.gen_range(0.2..0.6)),
        ]
    };
    Prototype { voiced, formants }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Senone of a table symbol: silence for pause/end, otherwise the acoustic
/// class of its base phone.
pub fn senone_of(symbol: &str, classes: usize) -> usize {
    if symbol == PAUSE || symbol == EOS {
        return SILENCE_SENONE;
    }
    let bare = symbol.split_once(':').map_or(symbol, |(_, s)| s);
    let (base, _) = split_digit(bare);
    1 + (fnv1a(base) % classes as u64) as usize
}

/// Pitch multiplier from a tone or stress digit, at relative position `x`
/// through the segment.
fn prosody(symbol: &str, x: f64) -> f64 {
    let zh = symbol.starts_with("zh:");
    match (zh, split_digit(symbol).1) {
        (true, Some("1")) => 1.12,
        (true, Some("2")) => 0.95 + 0.2 * x,
        (true, Some("3")) => 0.92 - 0.12 * (1.0 - (2.0 * x - 1.0).powi(2)),
        (true, Some("4")) => 1.18 - 0.3 * x,
        (false, Some("1")) => 1.08,
        (false, Some("2")) => 1.03,
        _ => 1.0,
    }
}

struct Resonator {
    a1: f64,
    a2: f64,
    gain: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new() -> Self {
        Self { a1: 0.0, a2: 0.0, gain: 0.0, y1: 0.0, y2: 0.0 }
    }

    fn tune(&mut self, freq: f64, bw: f64, amp: f64) {
        let r = (-PI * bw / RATE).exp();
        self.a1 = 2.0 * r * (2.0 * PI * freq.min(RATE / 2.0 - 100.0) / RATE).cos();
        self.a2 = -r * r;
        self.gain = amp * (1.0 - r);
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.gain * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// A labelled utterance before it is written to disk.
#[derive(Clone, Debug)]
pub struct SyntheticUtterance {
    pub entry: ManifestEntry,
    pub clip: AudioClip,
    pub labels: SenoneLabels,
    /// True frames per token, including the final end-of-utterance token.
    pub durations: DurationSequence,
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub utterances: Vec<SyntheticUtterance>,
}

impl SyntheticCorpus {
    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest::new(self.utterances.iter().map(|u| u.entry.clone()).collect())
    }

    pub fn labels(&self) -> Vec<SenoneLabels> {
        self.utterances.iter().map(|u| u.labels.clone()).collect()
    }

    /// Writes `audio/*.wav`, `manifest.jsonl`, `senones.txt` and
    /// `durations.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("audio")).map_err(|e| Error::io(dir, e))?;
        for u in &self.utterances {
            u.clip.write_wav(dir.join(&u.entry.audio_path))?;
        }
        self.manifest().write(&dir.join("manifest.jsonl"))?;
        let labels = write_senone_labels(&self.labels());
        std::fs::write(dir.join("senones.txt"), labels).map_err(|e| Error::io(dir.join("senones.txt"), e))?;
        let d: Vec<DurationSequence> = self.utterances.iter().map(|u| u.durations.clone()).collect();
        std::fs::write(dir.join("durations.txt"), write_durations(&d)).map_err(|e| Error::io(dir.join("durations.txt"), e))
    }
}

fn english_words(lex: &BilingualLexicon) -> Vec<String> {
    let mut w: Vec<String> = lex.en_entries.keys().cloned().collect();
    w.sort();
    w
}

fn mandarin_phrases(lex: &BilingualLexicon) -> Vec<String> {
    let mut p: Vec<String> = lex
        .translations
        .iter()
        .filter(|t| t.source.iter().all(|s| crate::text::tokenize::is_pinyin_token(s)))
        .map(|t| t.source.join(" "))
        .collect();
    p.extend(["wo3", "ta1", "hen3", "ye3", "de5"].map(String::from));
    p.sort();
    p.dedup();
    p
}

/// Builds the corpus deterministically from `seed`.
pub fn make_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let lex = BilingualLexicon::demo();
    let table = SymbolTable::canonical();
    let en_words = english_words(&lex);
    let zh_phrases = mandarin_phrases(&lex);
    let mut utterances = Vec::new();
    for (vi, voice) in config.voices.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((vi as u64 + 1) << 32));
        for ui in 0..voice.utterances {
            let n = rng.gen_range(config.min_words..=config.max_words);
            let pool = if voice.language == Language::En { &en_words } else { &zh_phrases };
            let mut text = String::new();
            for w in 0..n {
                if w > 0 {
                    text.push_str(if rng.gen_bool(0.2) { ", " } else { " " });
                }
                text.push_str(&pool[rng.gen_range(0..pool.len())]);
            }
            let seq = match voice.language {
                Language::En => tokenize_english(&text, &lex, &table)?,
                _ => tokenize_mandarin(&text, &lex, &table)?,
            };
            let symbols = seq.symbols(&table);
            let mut durations: Vec<usize> = symbols
                .iter()
                .map(|&s| match s {
                    PAUSE => config.pause_frames,
                    EOS => config.tail_frames,
                    _ => rng.gen_range(config.min_phone_frames..=config.max_phone_frames),
                })
                .collect();
            durations[0] += config.lead_frames;
            let id = format!("{}_{:03}", voice.id, ui);
            let (clip, labels) = render_utterance(config, voice, &symbols, &durations, &mut rng)?;
            utterances.push(SyntheticUtterance {
                entry: ManifestEntry {
                    utterance_id: id.clone(),
                    audio_path: format!("audio/{id}.wav"),
                    transcript: text,
                    language: voice.language,
                    speaker_id: voice.id.clone(),
                    synthetic: false,
                    features_path: None,
                    notes: vec![],
                },
                clip,
                labels: SenoneLabels { utterance_id: id.clone(), labels },
                durations: DurationSequence { utterance_id: id, durations },
            });
        }
    }
    Ok(SyntheticCorpus { utterances })
}

fn render_utterance(
    config: &SynthConfig,
    voice: &VoiceSpec,
    symbols: &[&str],
    durations: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(AudioClip, Vec<usize>)> {
    let total: usize = durations.iter().sum();
    let mut labels = Vec::with_capacity(total);
    let mut out = Vec::with_capacity(total * HOP);
    let mut res = [Resonator::new(), Resonator::new(), Resonator::new()];
    let mut tilt_state = 0.0;
    let mut phase = 0.0;
    let mut frame = 0usize;
    for (i, (&sym, &dur)) in symbols.iter().zip(durations).enumerate() {
        let lead = if i == 0 { config.lead_frames } else { 0 };
        for f in 0..dur {
            // the leading frames of the first token are silence
            let silent = f < lead || sym == PAUSE || sym == EOS;
            let senone = if silent { SILENCE_SENONE } else { senone_of(sym, config.acoustic_classes) };
            labels.push(senone);
            let proto = (!silent).then(|| prototype(senone, config.prototype_seed));
            if let Some(p) = &proto {
                for (r, &(freq, bw, amp)) in res.iter_mut().zip(&p.formants) {
                    r.tune(freq * voice.formant_scale, bw, amp);
                }
            }
            let seg_pos = (f.saturating_sub(lead)) as f64 / (dur - lead).max(1) as f64;
            let decl = 1.0 - 0.08 * frame as f64 / total.max(1) as f64;
            let f0 = voice.f0_hz * prosody(sym, seg_pos) * decl;
            for _ in 0..HOP {
                let excitation = match &proto {
                    Some(p) if p.voiced => {
                        phase += f0 / RATE;
                        if phase >= 1.0 {
                            phase -= 1.0;
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Some(_) => rng.gen_range(-0.3..0.3),
                    None => 0.0,
                };
                let mut y: f64 = res.iter_mut().map(|r| r.tick(excitation)).sum();
                if proto.is_none() {
                    y = 0.0;
                }
                tilt_state = (1.0 - voice.tilt) * y + voice.tilt * tilt_state;
                out.push(tilt_state);
            }
            frame += 1;
        }
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.0 { 0.5 / peak } else { 0.0 };
    let samples: Vec<f64> = out.iter().map(|v| v * gain + rng.gen_range(-config.noise..=config.noise)).collect();
    Ok((AudioClip::from_clamped(samples), labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{extract_logf0, extract_mfcc, fit_f0_stats, FeatureConfig};

    fn small() -> SynthConfig {
        let mut c = SynthConfig::default();
        for v in &mut c.voices {
            v.utterances = 2;
        }
        c
    }

    #[test]
    fn seeded_corpus_is_reproducible() {
        let a = make_synthetic_corpus(&small(), 7).unwrap();
        let b = make_synthetic_corpus(&small(), 7).unwrap();
        assert_eq!(a.manifest(), b.manifest());
        for (x, y) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(x.clip.samples(), y.clip.samples());
            assert_eq!(x.labels, y.labels);
        }
        let c = make_synthetic_corpus(&small(), 8).unwrap();
        assert_ne!(a.utterances[0].clip.samples(), c.utterances[0].clip.samples());
    }

    #[test]
    fn labels_match_mfcc_frames_and_durations() {
        let corpus = make_synthetic_corpus(&small(), 1).unwrap();
        let cfg = FeatureConfig::default();
        for u in &corpus.utterances {
            let m = extract_mfcc(&u.clip, &cfg).unwrap();
            assert_eq!(m.num_frames(), u.labels.labels.len());
            assert_eq!(u.durations.total(), u.labels.labels.len());
            assert!(u.labels.labels.iter().all(|&s| s < 488));
        }
    }

    #[test]
    fn speakers_have_distinct_pitch() {
        let corpus = make_synthetic_corpus(&small(), 3).unwrap();
        let cfg = FeatureConfig::default();
        let mut means = Vec::new();
        for v in &small().voices {
            let tracks: Vec<_> = corpus
                .utterances
                .iter()
                .filter(|u| u.entry.speaker_id == v.id)
                .map(|u| extract_logf0(&u.clip, &cfg).unwrap())
                .collect();
            means.push(fit_f0_stats(&v.id, &tracks).unwrap().mean_logf0);
        }
        assert!((means[0] - means[1]).abs() > 0.2, "{means:?}");
    }

    #[test]
    fn shared_classes_across_languages() {
        assert_eq!(senone_of("en:a1", 24), senone_of("zh:a3", 24));
        assert_eq!(senone_of(PAUSE, 24), SILENCE_SENONE);
        assert!(senone_of("zh:zh", 24) >= 1);
    }

    #[test]
    fn writes_corpus_files() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = make_synthetic_corpus(&small(), 2).unwrap();
        corpus.write(dir.path()).unwrap();
        let m = CorpusManifest::read(&dir.path().join("manifest.jsonl")).unwrap();
        m.validate(dir.path()).unwrap();
        assert_eq!(m.entries.len(), 4);
        let clip = AudioClip::read_wav(dir.path().join(&m.entries[0].audio_path)).unwrap();
        assert_eq!(clip.len(), corpus.utterances[0].clip.len());
    }
}
