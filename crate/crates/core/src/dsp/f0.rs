use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::track::{FeatureKind, FeatureTrack};
use crate::error::{Error, Result};

/// Per-speaker log-F0 statistics over voiced frames. `std_logf0` is the
/// population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F0Stats {
    pub speaker_id: String,
    pub mean_logf0: f64,
    pub std_logf0: f64,
    pub num_voiced_frames: usize,
}

pub fn voiced_values(track: &FeatureTrack) -> impl Iterator<Item = f64> + '_ {
    track.data().iter().copied().filter(|v| !v.is_nan())
}

pub fn fit_f0_stats(speaker_id: &str, tracks: &[FeatureTrack]) -> Result<F0Stats> {
    let mut values = Vec::new();
    for t in tracks {
        t.expect_kind(FeatureKind::LogF0)?;
        values.extend(voiced_values(t));
    }
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "speaker {speaker_id}: {} voiced frames, need at least 2",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std <= 0.0 {
        return Err(Error::InsufficientData(format!(
            "speaker {speaker_id}: all voiced log-F0 values are equal"
        )));
    }
    Ok(F0Stats {
        speaker_id: speaker_id.to_string(),
        mean_logf0: mean,
        std_logf0: std,
        num_voiced_frames: values.len(),
    })
}

/// Z-scores voiced frames; unvoiced frames become 0.
pub fn normalize_logf0(track: &FeatureTrack, stats: &F0Stats) -> Result<FeatureTrack> {
    track.expect_kind(FeatureKind::LogF0)?;
    if stats.std_logf0.is_nan() || stats.std_logf0 <= 0.0 {
        return Err(Error::Argument("F0 statistics have non-positive std".into()));
    }
    let data = track.data().mapv(|v| {
        if v.is_nan() {
            0.0
        } else {
            (v - stats.mean_logf0) / stats.std_logf0
        }
    });
    FeatureTrack::new(data, track.frame_shift(), FeatureKind::LogF0)
}

/// Inverse of [`normalize_logf0`] given the voicing mask of the original.
pub fn denormalize_logf0(normalized: &FeatureTrack, voiced: &[bool], stats: &F0Stats) -> Result<FeatureTrack> {
    normalized.expect_kind(FeatureKind::LogF0)?;
    if voiced.len() != normalized.num_frames() {
        return Err(Error::Data("voicing mask length differs from track length".into()));
    }
    let data = Array2::from_shape_fn((voiced.len(), 1), |(i, _)| {
        if voiced[i] {
            normalized.data()[[i, 0]] * stats.std_logf0 + stats.mean_logf0
        } else {
            f64::NAN
        }
    });
    FeatureTrack::new(data, normalized.frame_shift(), FeatureKind::LogF0)
}

/// Mean-pools a raw log-F0 track (NaN = unvoiced) by `factor`, averaging only
/// voiced frames in each group, then normalizes; all-unvoiced groups give 0.
pub fn downsample_normalized_logf0(track: &FeatureTrack, stats: &F0Stats, factor: usize) -> Result<Vec<f64>> {
    track.expect_kind(FeatureKind::LogF0)?;
    if factor < 1 {
        return Err(Error::Argument("downsampling factor must be >= 1".into()));
    }
    let col: Vec<f64> = track.data().column(0).to_vec();
    Ok(col
        .chunks(factor)
        .map(|g| {
            let voiced: Vec<f64> = g.iter().copied().filter(|v| !v.is_nan()).collect();
            if voiced.is_empty() {
                0.0
            } else {
                let m = voiced.iter().sum::<f64>() / voiced.len() as f64;
                (m - stats.mean_logf0) / stats.std_logf0
            }
        })
        .collect())
}
