use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of values in one LPCNet feature frame.
pub const LPCNET_DIM: usize = 20;
/// Serialized stand-in for an unvoiced log-F0 frame.
pub const UNVOICED_SERIALIZED: f32 = -1e10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureKind {
    Mfcc,
    LogF0,
    Lpcnet,
    Ppg,
    /// Attention alignment (decoder steps × encoder positions).
    Alignment,
}

impl FeatureKind {
    /// Fixed dimension, where the kind has one.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            FeatureKind::LogF0 => Some(1),
            FeatureKind::Lpcnet => Some(LPCNET_DIM),
            _ => None,
        }
    }

    pub fn file_tag(self) -> &'static str {
        match self {
            FeatureKind::Mfcc => "mfcc",
            FeatureKind::LogF0 => "lf0",
            FeatureKind::Lpcnet => "lpcnet",
            FeatureKind::Ppg => "ppg",
            FeatureKind::Alignment => "align",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FeatureKind::Mfcc => "MFCC",
            FeatureKind::LogF0 => "LOG_F0",
            FeatureKind::Lpcnet => "LPCNET",
            FeatureKind::Ppg => "PPG",
            FeatureKind::Alignment => "ALIGNMENT",
        };
        f.write_str(s)
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "MFCC" => FeatureKind::Mfcc,
            "LOG_F0" => FeatureKind::LogF0,
            "LPCNET" => FeatureKind::Lpcnet,
            "PPG" => FeatureKind::Ppg,
            "ALIGNMENT" => FeatureKind::Alignment,
            other => return Err(Error::Format(format!("unknown feature kind {other:?}"))),
        })
    }
}

/// Time-major matrix of frame features.
///
/// Log-F0 tracks mark unvoiced frames with NaN; every other value is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    data: Array2<f64>,
    frame_shift: f64,
    kind: FeatureKind,
}

impl FeatureTrack {
    pub fn new(data: Array2<f64>, frame_shift: f64, kind: FeatureKind) -> Result<Self> {
        if let Some(d) = kind.fixed_dim() {
            if data.ncols() != d {
                return Err(Error::Type(format!("{kind} track must have dim {d}, got {}", data.ncols())));
            }
        }
        let bad = data
            .iter()
            .any(|v| !(v.is_finite() || (kind == FeatureKind::LogF0 && v.is_nan())));
        if bad {
            return Err(Error::Numeric(format!("{kind} track contains non-finite values")));
        }
        if !(frame_shift > 0.0 && frame_shift.is_finite()) {
            return Err(Error::Argument(format!("frame shift {frame_shift} must be positive")));
        }
        Ok(Self { data, frame_shift, kind })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn expect_kind(&self, kind: FeatureKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Type(format!("expected a {kind} track, got {}", self.kind)));
        }
        Ok(())
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    /// Writes little-endian f32 row-major frames to `path` and a key/value
    /// metadata sidecar to `path.meta`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let meta = Self::sidecar_path(path);
        std::fs::write(&meta, self.metadata()).map_err(|e| Error::io(&meta, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for &v in self.data.iter() {
            let f = if v.is_nan() { UNVOICED_SERIALIZED } else { v as f32 };
            bytes.extend_from_slice(&f.to_le_bytes());
        }
        bytes
    }

    pub fn metadata(&self) -> String {
        format!(
            "dim={}\nframe_shift={}\nfeature_kind={}\nnum_frames={}\n",
            self.dim(),
            self.frame_shift,
            self.kind,
            self.num_frames()
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta_path = Self::sidecar_path(path);
        let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut dim = None;
        let mut shift = None;
        let mut kind = None;
        let mut frames = None;
        for line in meta.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("{}: bad metadata line {line:?}", meta_path.display())))?;
            let num_err = || Error::Format(format!("{}: bad value for {k}", meta_path.display()));
            match k.trim() {
                "dim" => dim = Some(v.trim().parse::<usize>().map_err(|_| num_err())?),
                "frame_shift" => shift = Some(v.trim().parse::<f64>().map_err(|_| num_err())?),
                "feature_kind" => kind = Some(v.trim().parse::<FeatureKind>()?),
                "num_frames" => frames = Some(v.trim().parse::<usize>().map_err(|_| num_err())?),
                _ => {}
            }
        }
        let missing = |k: &str| Error::Format(format!("{}: missing {k}", meta_path.display()));
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let shift = shift.ok_or_else(|| missing("frame_shift"))?;
        let kind = kind.ok_or_else(|| missing("feature_kind"))?;
        let frames = frames.ok_or_else(|| missing("num_frames"))?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, frames, dim, shift, kind)
    }

    pub fn from_bytes(bytes: &[u8], frames: usize, dim: usize, frame_shift: f64, kind: FeatureKind) -> Result<Self> {
        if bytes.len() != frames * dim * 4 {
            return Err(Error::Format(format!(
                "feature payload has {} bytes, metadata implies {}",
                bytes.len(),
                frames * dim * 4
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .map(|f| {
                if kind == FeatureKind::LogF0 && f <= UNVOICED_SERIALIZED / 10.0 {
                    f64::NAN
                } else {
                    f as f64
                }
            })
            .collect();
        let data = Array2::from_shape_vec((frames, dim), values).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(data, frame_shift, kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dimension_is_checked_for_fixed_kinds() {
        assert!(FeatureTrack::new(Array2::zeros((3, 19)), 0.01, FeatureKind::Lpcnet).is_err());
        assert!(FeatureTrack::new(Array2::zeros((3, 2)), 0.01, FeatureKind::LogF0).is_err());
        assert!(FeatureTrack::new(Array2::zeros((3, 7)), 0.01, FeatureKind::Mfcc).is_ok());
    }

    #[test]
    fn unvoiced_sentinel_survives_serialization() {
        let data = Array2::from_shape_vec((3, 1), vec![5.0, f64::NAN, 4.5]).unwrap();
        let t = FeatureTrack::new(data, 0.01, FeatureKind::LogF0).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(f32::from_le_bytes(bytes[4..8].try_into().unwrap()), -1e10);
        let back = FeatureTrack::from_bytes(&bytes, 3, 1, 0.01, FeatureKind::LogF0).unwrap();
        assert!(back.data()[[1, 0]].is_nan());
        assert_eq!(back.data()[[0, 0]], 5.0);
    }

    proptest! {
        #[test]
        fn file_round_trip_is_bit_exact(
            frames in 0usize..20,
            vals in proptest::collection::vec(-1e4f32..1e4, 400),
            shift in 0.001f64..0.1,
        ) {
            let data = Array2::from_shape_fn((frames, LPCNET_DIM), |(r, c)| vals[(r * LPCNET_DIM + c) % 400] as f64);
            let t = FeatureTrack::new(data, shift, FeatureKind::Lpcnet).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("x.f32");
            t.save(&p).unwrap();
            let back = FeatureTrack::load(&p).unwrap();
            prop_assert_eq!(&back, &t);
            let p2 = dir.path().join("y.f32");
            back.save(&p2).unwrap();
            prop_assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
            prop_assert_eq!(
                std::fs::read(FeatureTrack::sidecar_path(&p)).unwrap(),
                std::fs::read(FeatureTrack::sidecar_path(&p2)).unwrap()
            );
        }
    }
}
