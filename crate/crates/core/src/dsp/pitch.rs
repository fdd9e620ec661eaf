//! Normalized-autocorrelation pitch estimation.

use super::spectrum::{frame_at, FeatureConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PitchEstimate {
    /// Fractional pitch period in samples, within `[min_lag, max_lag]`.
    pub period: f64,
    /// Peak normalized correlation, in `[0, 1]`.
    pub correlation: f64,
}

/// Candidates within this fraction of the best correlation are preferred
/// when shorter, which suppresses period doubling.
const OCTAVE_TOLERANCE: f64 = 0.85;
const ENERGY_EPS: f64 = 1e-12;

/// Estimates pitch for every frame. Frame `i` correlates the window starting
/// at `i * hop` against copies of itself delayed by each candidate lag.
pub fn track_pitch(samples: &[f64], cfg: &FeatureConfig) -> Vec<PitchEstimate> {
    let n = cfg.num_frames(samples.len());
    let (lo, hi) = (cfg.min_lag(), cfg.max_lag());
    let w = cfg.frame_len;
    (0..n)
        .map(|i| {
            let seg = frame_at(samples, i * cfg.hop, w + hi + 1);
            estimate(&seg, w, lo, hi)
        })
        .collect()
}

fn estimate(seg: &[f64], w: usize, lo: usize, hi: usize) -> PitchEstimate {
    let energy0: f64 = seg[..w].iter().map(|v| v * v).sum();
    // running energy of the delayed window
    let mut energy_lag: f64 = seg[lo..lo + w].iter().map(|v| v * v).sum();
    let mut r = vec![0.0; hi + 2];
    for lag in lo..=hi + 1 {
        if lag > lo {
            energy_lag += seg[lag + w - 1].powi(2) - seg[lag - 1].powi(2);
        }
        let cross: f64 = seg[..w].iter().zip(&seg[lag..lag + w]).map(|(a, b)| a * b).sum();
        let denom = (energy0 * energy_lag.max(0.0)).sqrt();
        r[lag] = if denom > ENERGY_EPS { cross / denom } else { 0.0 };
    }

    let best = (lo..=hi).map(|l| r[l]).fold(f64::NEG_INFINITY, f64::max);
    if best <= 0.0 {
        return PitchEstimate {
            period: hi as f64,
            correlation: 0.0,
        };
    }
    let is_peak = |l: usize| {
        let left = if l > lo { r[l - 1] } else { f64::NEG_INFINITY };
        r[l] >= left && r[l] >= r[l + 1]
    };
    let lag = (lo..=hi)
        .find(|&l| r[l] >= OCTAVE_TOLERANCE * best && is_peak(l))
        .unwrap_or_else(|| (lo..=hi).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap());

    let (mut period, mut corr) = (lag as f64, r[lag]);
    if lag > lo && lag < hi {
        let (a, b, c) = (r[lag - 1], r[lag], r[lag + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            let delta = (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            period += delta;
            corr = b - 0.25 * (a - c) * delta;
        }
    }
    PitchEstimate {
        period: period.clamp(lo as f64, hi as f64),
        correlation: corr.clamp(0.0, 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pure_tone_period() {
        let cfg = FeatureConfig::default();
        let x: Vec<f64> = (0..16000).map(|n| 0.5 * (2.0 * PI * 200.0 * n as f64 / 16000.0).sin()).collect();
        let est = track_pitch(&x, &cfg);
        for e in &est[5..80] {
            assert!((e.period - 80.0).abs() < 0.5, "{e:?}");
            assert!(e.correlation > 0.99);
        }
    }

    #[test]
    fn silence_has_zero_correlation() {
        let cfg = FeatureConfig::default();
        let est = track_pitch(&vec![0.0; 4000], &cfg);
        assert!(est.iter().all(|e| e.correlation == 0.0));
    }
}
