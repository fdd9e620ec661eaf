//! Shared model plumbing: per-dimension normalizers, JSON checkpoints and
//! training reports.

use std::path::Path;

use ndarray::{Array2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Per-dimension z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Pooled statistics over all rows; near-constant dimensions keep std 1.
    pub fn fit<'a>(mats: impl IntoIterator<Item = &'a Array2<f64>>) -> Result<Self> {
        let mats: Vec<&Array2<f64>> = mats.into_iter().collect();
        let dim = mats.first().map(|m| m.ncols()).ok_or_else(|| Error::InsufficientData("no feature matrices".into()))?;
        if mats.iter().any(|m| m.ncols() != dim) {
            return Err(Error::Data("feature matrices disagree on dimension".into()));
        }
        let n: usize = mats.iter().map(|m| m.nrows()).sum();
        if n == 0 {
            return Err(Error::InsufficientData("no feature frames".into()));
        }
        let mut sum = vec![0.0; dim];
        for m in &mats {
            for (s, v) in sum.iter_mut().zip(m.sum_axis(Axis(0))) {
                *s += v;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; dim];
        for m in &mats {
            for row in m.rows() {
                for (k, v) in row.iter().enumerate() {
                    var[k] += (v - mean[k]).powi(2);
                }
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt()).map(|s| if s > 1e-8 { s } else { 1.0 }).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) / self.std[k];
            }
        }
        y
    }

    pub fn denormalize(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[k] + self.mean[k];
            }
        }
        y
    }
}

/// Self-describing checkpoint wrapper.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub format: u32,
    pub arch: String,
    pub model: M,
}

pub fn save_checkpoint<M: Serialize>(path: &Path, arch: &str, model: &M) -> Result<()> {
    let ck = Checkpoint { format: CHECKPOINT_FORMAT, arch: arch.to_string(), model };
    write_json(path, &ck)
}

pub fn load_checkpoint<M: DeserializeOwned>(path: &Path, arch: &str) -> Result<M> {
    #[derive(Deserialize)]
    struct Header {
        format: u32,
        arch: String,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let head: Header = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: not a checkpoint ({e})", path.display())))?;
    if head.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("{}: unsupported format {}", path.display(), head.format)));
    }
    if head.arch != arch {
        return Err(Error::Checkpoint(format!("{}: holds a {} model, expected {arch}", path.display(), head.arch)));
    }
    let ck: Checkpoint<M> = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(ck.model)
}

/// Reads only the architecture tag of a checkpoint.
pub fn checkpoint_arch(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Header {
        arch: String,
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let head: Header = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: not a checkpoint ({e})", path.display())))?;
    Ok(head.arch)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loss history of a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}
