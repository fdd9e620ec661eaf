use ndarray::Array2;

use super::audio::{AudioClip, SAMPLE_RATE};
use super::pitch::{track_pitch, PitchEstimate};
use super::spectrum::{apply_bank, bark_filterbank, dct2, mel_filterbank, FeatureConfig, PowerSpectrum};
use super::track::{FeatureKind, FeatureTrack, LPCNET_DIM};
use crate::error::Result;

/// Floor added to filterbank energies before taking logs.
pub const LOG_ENERGY_FLOOR: f64 = 1e-10;

pub fn extract_mfcc(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureTrack> {
    cfg.check_clip(clip)?;
    let ps = PowerSpectrum::new(cfg.frame_len, cfg.n_fft);
    let bank = mel_filterbank(cfg.n_mels, ps.num_bins());
    let frames = ps.frames(clip.samples(), cfg.hop, cfg.frame_len);
    let mut data = Array2::zeros((frames.len(), cfg.n_mfcc));
    for (i, power) in frames.iter().enumerate() {
        let log_mel: Vec<f64> = apply_bank(&bank, power)
            .into_iter()
            .map(|e| (e + LOG_ENERGY_FLOOR).ln())
            .collect();
        for (j, c) in dct2(&log_mel, cfg.n_mfcc).into_iter().enumerate() {
            data[[i, j]] = c;
        }
    }
    FeatureTrack::new(data, cfg.frame_shift_secs(), FeatureKind::Mfcc)
}

/// Log energies of the 18 Bark bands for each frame.
pub fn bark_log_energies(samples: &[f64], cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let ps = PowerSpectrum::new(cfg.frame_len, cfg.n_fft);
    let bank = bark_filterbank(cfg.bark_bands, ps.num_bins());
    ps.frames(samples, cfg.hop, cfg.frame_len)
        .iter()
        .map(|p| {
            apply_bank(&bank, p)
                .into_iter()
                .map(|e| (e + LOG_ENERGY_FLOOR).ln())
                .collect()
        })
        .collect()
}

/// 20-dim frames: 18 Bark cepstra, pitch period (samples), pitch correlation.
pub fn extract_lpcnet_features(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureTrack> {
    cfg.check_clip(clip)?;
    let bands = bark_log_energies(clip.samples(), cfg);
    let pitch = track_pitch(clip.samples(), cfg);
    let mut data = Array2::zeros((bands.len(), LPCNET_DIM));
    for (i, (b, p)) in bands.iter().zip(&pitch).enumerate() {
        for (j, c) in dct2(b, cfg.bark_bands).into_iter().enumerate() {
            data[[i, j]] = c;
        }
        data[[i, 18]] = p.period;
        data[[i, 19]] = p.correlation;
    }
    FeatureTrack::new(data, cfg.frame_shift_secs(), FeatureKind::Lpcnet)
}

pub fn logf0_from_pitch(pitch: &[PitchEstimate], cfg: &FeatureConfig) -> Vec<f64> {
    pitch
        .iter()
        .map(|p| {
            if p.correlation >= cfg.voicing_threshold {
                (SAMPLE_RATE as f64 / p.period).ln()
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Natural-log F0 per frame; unvoiced frames hold NaN.
pub fn extract_logf0(clip: &AudioClip, cfg: &FeatureConfig) -> Result<FeatureTrack> {
    cfg.check_clip(clip)?;
    let values = logf0_from_pitch(&track_pitch(clip.samples(), cfg), cfg);
    let n = values.len();
    let data = Array2::from_shape_vec((n, 1), values).expect("column");
    FeatureTrack::new(data, cfg.frame_shift_secs(), FeatureKind::LogF0)
}
