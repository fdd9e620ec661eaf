//! Waveform rendering from LPCNet features: either through an external
//! LPCNet binary, or with a deterministic source-filter fallback.

use std::path::Path;
use std::process::Command;
use std::sync::{Condvar, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::audio::SAMPLE_RATE;
use crate::dsp::spectrum::{bark_filterbank, hann, hz_to_bark, idct2};
use crate::dsp::{AudioClip, FeatureConfig, FeatureKind, FeatureTrack, LPCNET_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VocoderMode {
    External,
    DspFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocoderSpec {
    pub mode: VocoderMode,
    /// Command line with `{input}` (float32 features, 20 per frame) and
    /// `{output}` placeholders. The output is 16 kHz audio, either WAV or
    /// raw 16-bit PCM.
    pub command: Option<String>,
    /// Concurrent external processes allowed.
    pub max_processes: usize,
    /// Pitch correlation above which a frame is rendered voiced.
    pub voicing_threshold: f64,
    /// Seeds the fallback's noise excitation.
    pub seed: u64,
}

impl Default for VocoderSpec {
    fn default() -> Self {
        Self { mode: VocoderMode::DspFallback, command: None, max_processes: 1, voicing_threshold: 0.5, seed: 0 }
    }
}

impl VocoderSpec {
    pub fn external(command: &str) -> Self {
        Self { mode: VocoderMode::External, command: Some(command.to_string()), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == VocoderMode::External && self.command.as_deref().is_none_or(|c| c.trim().is_empty()) {
            return Err(Error::Config("external vocoder mode needs a command".into()));
        }
        if self.max_processes == 0 {
            return Err(Error::Config("vocoder process limit must be >= 1".into()));
        }
        Ok(())
    }
}

pub fn render(features: &FeatureTrack, spec: &VocoderSpec) -> Result<AudioClip> {
    spec.validate()?;
    features.expect_kind(FeatureKind::Lpcnet)?;
    if features.dim() != LPCNET_DIM {
        return Err(Error::Type(format!("vocoder needs {LPCNET_DIM}-dim frames, got {}", features.dim())));
    }
    if features.num_frames() == 0 {
        return Err(Error::EmptyInput("no feature frames to render".into()));
    }
    match spec.mode {
        VocoderMode::External => render_external(features, spec),
        VocoderMode::DspFallback => Ok(render_fallback(features, spec)),
    }
}

struct ProcessSlots {
    busy: Mutex<usize>,
    freed: Condvar,
}

static SLOTS: ProcessSlots = ProcessSlots { busy: Mutex::new(0), freed: Condvar::new() };

struct SlotGuard;

impl SlotGuard {
    fn acquire(limit: usize) -> Self {
        let mut busy = SLOTS.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= limit {
            busy = SLOTS.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        SlotGuard
    }
}

impl Drop for SlotGuard {
    fn drop(&mut self) {
        let mut busy = SLOTS.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        SLOTS.freed.notify_one();
    }
}

fn render_external(features: &FeatureTrack, spec: &VocoderSpec) -> Result<AudioClip> {
    let template = spec.command.as_deref().unwrap_or_default();
    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("features.f32");
    let output = dir.path().join("audio.pcm");
    std::fs::write(&input, features.to_bytes()).map_err(|e| Error::io(&input, e))?;
    let words = shlex::split(template).ok_or_else(|| Error::Config(format!("cannot parse vocoder command {template:?}")))?;
    let words: Vec<String> = words
        .into_iter()
        .map(|w| w.replace("{input}", &input.to_string_lossy()).replace("{output}", &output.to_string_lossy()))
        .collect();
    let (program, args) = words.split_first().ok_or_else(|| Error::Config("empty vocoder command".into()))?;
    let result = {
        let _slot = SlotGuard::acquire(spec.max_processes);
        Command::new(program).args(args).output()
    };
    let out = result.map_err(|e| Error::Subprocess(format!("cannot start {program}: {e}")))?;
    if !out.status.success() {
        return Err(Error::Subprocess(format!(
            "{program} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        )));
    }
    read_vocoder_output(&output)
}

fn read_vocoder_output(path: &Path) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"RIFF") {
        AudioClip::read_wav(path)
    } else {
        AudioClip::read_raw_pcm(path)
    }
}

/// Per-bin power envelope from 18 Bark cepstra: band log-energies spread
/// over each band's filter mass, interpolated between band centres.
fn envelope(cepstra: &[f64], bark_pos: &[f64], centres: &[f64], band_mass: &[f64]) -> Vec<f64> {
    let log_e: Vec<f64> = idct2(cepstra).iter().zip(band_mass).map(|(e, m)| e - m.ln()).collect();
    bark_pos
        .iter()
        .map(|&z| {
            let last = centres.len() - 1;
            let v = if z <= centres[0] {
                log_e[0]
            } else if z >= centres[last] {
                log_e[last]
            } else {
                let b = centres.partition_point(|&c| c <= z) - 1;
                let t = (z - centres[b]) / (centres[b + 1] - centres[b]);
                log_e[b] * (1.0 - t) + log_e[b + 1] * t
            };
            v.exp()
        })
        .collect()
}

/// Pulse-or-noise excitation shaped frame by frame with the cepstral
/// envelope and overlap-added with a Hann window at 50% overlap.
fn render_fallback(features: &FeatureTrack, spec: &VocoderSpec) -> AudioClip {
    let cfg = FeatureConfig::default();
    let (hop, frame_len, n_fft) = (cfg.hop, cfg.frame_len, cfg.n_fft);
    let data = features.data();
    let frames = data.nrows();
    let bins = n_fft / 2 + 1;
    let bank = bark_filterbank(cfg.bark_bands, bins);
    let band_mass: Vec<f64> = bank.iter().map(|w| w.iter().sum::<f64>().max(1e-9)).collect();
    let top = hz_to_bark(SAMPLE_RATE as f64 / 2.0);
    let centres: Vec<f64> = (0..cfg.bark_bands).map(|b| b as f64 * top / (cfg.bark_bands - 1) as f64).collect();
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let bark_pos: Vec<f64> = (0..bins).map(|k| hz_to_bark(k as f64 * nyquist / (bins - 1) as f64)).collect();
    // analysis power of unit-variance white noise under the analysis window
    let window_power: f64 = hann(frame_len).iter().map(|w| w * w).sum();

    // excitation with a continuous pulse phase across frames
    let total = frames * hop;
    let centre = frame_len / 2;
    let span = total + centre + hop;
    let mut excitation = vec![0.0; span];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut phase = 0.0;
    for (n, e) in excitation.iter_mut().enumerate() {
        let i = (n.saturating_sub(centre) / hop).min(frames - 1);
        let (period, corr) = (data[[i, 18]], data[[i, 19]]);
        let noise: f64 = rng.gen_range(-1.0..1.0) * 3f64.sqrt();
        if corr > spec.voicing_threshold && period >= 2.0 {
            phase += 1.0 / period;
            if phase >= 1.0 {
                phase -= 1.0;
                *e = period.sqrt();
            }
        } else {
            *e = noise;
        }
    }

    let seg_len = 2 * hop;
    let win = hann(seg_len);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);
    let mut out = vec![0.0; span + n_fft];
    for i in 0..frames {
        let env = envelope(&data.row(i).as_slice().expect("row-major track")[..18], &bark_pos, &centres, &band_mass);
        // segment centred on the analysis centre of frame `i`
        let start = (i * hop + centre) as isize - hop as isize;
        let mut buf: Vec<Complex64> = (0..n_fft)
            .map(|k| {
                let n = start + k as isize;
                let x = if k < seg_len && n >= 0 { excitation.get(n as usize).copied().unwrap_or(0.0) } else { 0.0 };
                Complex64::new(if k < seg_len { x * win[k] } else { 0.0 }, 0.0)
            })
            .collect();
        fwd.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            let bin = if k < bins { k } else { n_fft - k };
            *c *= (env[bin] / window_power).sqrt();
        }
        inv.process(&mut buf);
        for (k, c) in buf.iter().enumerate() {
            let n = start + k as isize;
            if n >= 0 {
                out[n as usize] += c.re / n_fft as f64;
            }
        }
    }
    out.truncate(total);
    AudioClip::from_clamped(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{extract_logf0, extract_lpcnet_features};
    use ndarray::Array2;

    fn harmonic(f0: f64, secs: f64) -> AudioClip {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        AudioClip::from_clamped((0..n).map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            (1..=8).map(|h| (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64).sum::<f64>() * 0.2
        }))
    }

    fn voiced_f0(clip: &AudioClip) -> Vec<f64> {
        let lf0 = extract_logf0(clip, &FeatureConfig::default()).unwrap();
        lf0.data().column(0).iter().filter(|v| v.is_finite()).map(|v| v.exp()).collect()
    }

    #[test]
    fn duration_follows_frame_count() {
        let track = FeatureTrack::new(Array2::zeros((100, 20)), 0.01, FeatureKind::Lpcnet).unwrap();
        let clip = render(&track, &VocoderSpec::default()).unwrap();
        assert!((clip.duration_secs() - 1.0).abs() <= 0.01);
    }

    #[test]
    fn rejects_bad_input() {
        let empty = FeatureTrack::new(Array2::zeros((0, 20)), 0.01, FeatureKind::Lpcnet).unwrap();
        assert!(matches!(render(&empty, &VocoderSpec::default()), Err(Error::EmptyInput(_))));
        let wrong = FeatureTrack::new(Array2::zeros((3, 13)), 0.01, FeatureKind::Mfcc).unwrap();
        assert!(matches!(render(&wrong, &VocoderSpec::default()), Err(Error::Type(_))));
        let ok = FeatureTrack::new(Array2::zeros((3, 20)), 0.01, FeatureKind::Lpcnet).unwrap();
        let spec = VocoderSpec { mode: VocoderMode::External, ..VocoderSpec::default() };
        assert!(matches!(render(&ok, &spec), Err(Error::Config(_))));
    }

    #[test]
    fn pitch_survives_the_loop() {
        let src = harmonic(150.0, 0.5);
        let feats = extract_lpcnet_features(&src, &FeatureConfig::default()).unwrap();
        let out = render(&feats, &VocoderSpec::default()).unwrap();
        let f0 = voiced_f0(&out);
        assert!(f0.len() > 30, "{}", f0.len());
        let good = f0.iter().filter(|f| (*f / 150.0 - 1.0).abs() < 0.1).count();
        assert!(good as f64 >= 0.9 * f0.len() as f64, "{good}/{}", f0.len());
    }

    #[test]
    fn deterministic() {
        let src = harmonic(200.0, 0.2);
        let mut feats = extract_lpcnet_features(&src, &FeatureConfig::default()).unwrap().into_data();
        for i in 0..5 {
            feats[[i, 19]] = 0.0;
        }
        let feats = FeatureTrack::new(feats, 0.01, FeatureKind::Lpcnet).unwrap();
        let a = render(&feats, &VocoderSpec::default()).unwrap();
        let b = render(&feats, &VocoderSpec::default()).unwrap();
        assert_eq!(a.samples(), b.samples());
        let c = render(&feats, &VocoderSpec { seed: 1, ..VocoderSpec::default() }).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn voicing_decisions_survive_the_loop() {
        // voiced, silent, voiced
        let mut s = harmonic(180.0, 0.3).samples().to_vec();
        s.extend(std::iter::repeat_n(0.0, 4800));
        s.extend(harmonic(120.0, 0.3).samples());
        let src = AudioClip::from_clamped(s);
        let cfg = FeatureConfig::default();
        let out = render(&extract_lpcnet_features(&src, &cfg).unwrap(), &VocoderSpec::default()).unwrap();
        let a = extract_logf0(&src, &cfg).unwrap();
        let b = extract_logf0(&out, &cfg).unwrap();
        let agree = a.data().iter().zip(b.data().iter()).filter(|(x, y)| x.is_finite() == y.is_finite()).count();
        assert!(agree as f64 >= 0.9 * a.num_frames() as f64, "{agree}/{}", a.num_frames());
    }

    #[cfg(unix)]
    #[test]
    fn external_command_round_trip() {
        let feats = FeatureTrack::new(Array2::zeros((10, 20)), 0.01, FeatureKind::Lpcnet).unwrap();
        // each float32 frame is 80 bytes; keep 3200 bytes as 1600 PCM samples
        let spec = VocoderSpec::external("sh -c 'head -c 3200 /dev/zero > \"$1\"' sh {output}");
        let clip = render(&feats, &spec).unwrap();
        assert_eq!(clip.len(), 1600);
        let fail = VocoderSpec::external("sh -c 'echo broken >&2; exit 3'");
        let err = render(&feats, &fail).unwrap_err().to_string();
        assert!(err.contains("broken"), "{err}");
    }
}
