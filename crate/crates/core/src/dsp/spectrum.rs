use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::audio::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

/// Analysis settings shared by every extractor, so that all tracks of an
/// utterance align frame for frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Analysis window, in samples (25 ms).
    pub frame_len: usize,
    /// Frame advance, in samples (10 ms).
    pub hop: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub bark_bands: usize,
    pub pitch_min_hz: f64,
    pub pitch_max_hz: f64,
    /// Pitch correlation at or above which a frame counts as voiced.
    pub voicing_threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
            n_fft: 512,
            n_mels: 40,
            n_mfcc: 13,
            bark_bands: 18,
            pitch_min_hz: 60.0,
            pitch_max_hz: 400.0,
            voicing_threshold: 0.5,
        }
    }
}

impl FeatureConfig {
    pub fn frame_shift_secs(&self) -> f64 {
        self.hop as f64 / SAMPLE_RATE as f64
    }

    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop)
    }

    pub fn min_lag(&self) -> usize {
        (SAMPLE_RATE as f64 / self.pitch_max_hz).floor() as usize
    }

    pub fn max_lag(&self) -> usize {
        (SAMPLE_RATE as f64 / self.pitch_min_hz).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hop == 0 || self.frame_len == 0 {
            return bad("frame length and hop must be positive");
        }
        if self.n_fft < self.frame_len {
            return bad("n_fft must cover the analysis window");
        }
        if self.bark_bands != 18 {
            return bad("LPCNet features use exactly 18 Bark bands");
        }
        if self.n_mfcc == 0 || self.n_mfcc > self.n_mels {
            return bad("n_mfcc must be in 1..=n_mels");
        }
        if !(self.pitch_min_hz > 0.0 && self.pitch_min_hz < self.pitch_max_hz) {
            return bad("pitch range must satisfy 0 < min < max");
        }
        Ok(())
    }

    /// Common preconditions of all extractors.
    pub fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        self.validate()?;
        if clip.sample_rate() != SAMPLE_RATE {
            return Err(Error::Format(format!("sample rate {} Hz, expected {SAMPLE_RATE}", clip.sample_rate())));
        }
        if clip.len() < self.frame_len {
            return Err(Error::EmptyInput(format!(
                "clip has {} samples, shorter than one {}-sample frame",
                clip.len(),
                self.frame_len
            )));
        }
        Ok(())
    }
}

/// Frame `i` covers samples `[i * hop, i * hop + len)`, zero padded past the end.
pub fn frame_at(samples: &[f64], start: usize, len: usize) -> Vec<f64> {
    (start..start + len)
        .map(|n| samples.get(n).copied().unwrap_or(0.0))
        .collect()
}

pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Windowed power-spectrum analyser.
pub struct PowerSpectrum {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    n_fft: usize,
}

impl PowerSpectrum {
    pub fn new(frame_len: usize, n_fft: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fft: planner.plan_fft_forward(n_fft),
            window: hann(frame_len),
            n_fft,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn compute(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for (b, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
            b.re = x * w;
        }
        self.fft.process(&mut buf);
        buf[..self.num_bins()].iter().map(|c| c.norm_sqr()).collect()
    }

    /// Power spectra of every frame of `samples`.
    pub fn frames(&self, samples: &[f64], hop: usize, frame_len: usize) -> Vec<Vec<f64>> {
        let n = samples.len().div_ceil(hop);
        (0..n)
            .map(|i| self.compute(&frame_at(samples, i * hop, frame_len)))
            .collect()
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

pub fn hz_to_bark(f: f64) -> f64 {
    13.0 * (0.00076 * f).atan() + 3.5 * (f / 7500.0).powi(2).atan()
}

/// Triangular filters over FFT bins; `points` are `bands + 2` edge positions
/// on a warped axis and `warp` maps Hz onto that axis.
fn triangular_bank(points: &[f64], n_bins: usize, warp: impl Fn(f64) -> f64) -> Vec<Vec<f64>> {
    let bands = points.len() - 2;
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let bin_pos: Vec<f64> = (0..n_bins)
        .map(|k| warp(k as f64 * nyquist / (n_bins - 1) as f64))
        .collect();
    (0..bands)
        .map(|b| {
            let (lo, mid, hi) = (points[b], points[b + 1], points[b + 2]);
            bin_pos
                .iter()
                .map(|&p| {
                    if p <= lo || p >= hi {
                        0.0
                    } else if p <= mid {
                        (p - lo) / (mid - lo)
                    } else {
                        (hi - p) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn mel_filterbank(n_mels: usize, n_bins: usize) -> Vec<Vec<f64>> {
    let top = hz_to_mel(SAMPLE_RATE as f64 / 2.0);
    let points: Vec<f64> = (0..n_mels + 2).map(|i| top * i as f64 / (n_mels + 1) as f64).collect();
    triangular_bank(&points, n_bins, hz_to_mel)
}

/// Triangular bands with centres evenly spaced on the Bark scale. The first
/// and last bands are half-triangles anchored at 0 Hz and Nyquist.
pub fn bark_filterbank(bands: usize, n_bins: usize) -> Vec<Vec<f64>> {
    let top = hz_to_bark(SAMPLE_RATE as f64 / 2.0);
    let step = top / (bands - 1) as f64;
    let points: Vec<f64> = (0..bands + 2).map(|i| (i as f64 - 1.0) * step).collect();
    triangular_bank(&points, n_bins, hz_to_bark)
        .into_iter()
        .enumerate()
        .map(|(b, mut w)| {
            // close the half-triangles at the spectrum edges
            if b == 0 {
                w[0] = 1.0;
            }
            if b == bands - 1 {
                w[n_bins - 1] = 1.0;
            }
            w
        })
        .collect()
}

pub fn apply_bank(bank: &[Vec<f64>], power: &[f64]) -> Vec<f64> {
    bank.iter()
        .map(|w| w.iter().zip(power).map(|(a, b)| a * b).sum())
        .collect()
}

/// Orthonormal DCT-II, keeping the first `n_out` coefficients.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / m).cos())
                .sum();
            let norm = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            s * norm
        })
        .collect()
}

/// Inverse of [`dct2`] for a full set of coefficients.
pub fn idct2(c: &[f64]) -> Vec<f64> {
    let m = c.len() as f64;
    (0..c.len())
        .map(|i| {
            c.iter()
                .enumerate()
                .map(|(k, v)| {
                    let norm = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                    v * norm * (PI * k as f64 * (i as f64 + 0.5) / m).cos()
                })
                .sum()
        })
        .collect()
}
