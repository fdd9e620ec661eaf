use std::path::Path;

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const BIT_DEPTH: u16 = 16;

/// Mono waveform at 16 kHz with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    bit_depth: u16,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::Format(format!(
                "sample rate {sample_rate} Hz, expected {SAMPLE_RATE} Hz"
            )));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || v.abs() > 1.0)
        {
            return Err(Error::Format(format!("sample {i} = {v} is outside [-1, 1]")));
        }
        Ok(Self {
            samples,
            sample_rate,
            bit_depth: BIT_DEPTH,
        })
    }

    /// Builds a clip, clamping samples into `[-1, 1]` (non-finite become 0).
    pub fn from_clamped(samples: impl IntoIterator<Item = f64>) -> Self {
        let samples = samples
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
            bit_depth: BIT_DEPTH,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn bit_depth(&self) -> u16 {
        self.bit_depth
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_clamped(self.samples.iter().map(|v| v * k))
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = hound::WavReader::open(path).map_err(|e| match e {
            hound::Error::IoError(io) => Error::io(path, io),
            other => Error::Format(format!("{}: {other}", path.display())),
        })?;
        let spec = reader.spec();
        let problem = if spec.channels != 1 {
            Some(format!("{} channels, expected mono", spec.channels))
        } else if spec.sample_rate != SAMPLE_RATE {
            Some(format!("sample rate {} Hz, expected {SAMPLE_RATE} Hz", spec.sample_rate))
        } else if spec.sample_format != hound::SampleFormat::Int {
            Some("floating-point samples, expected PCM".to_string())
        } else if spec.bits_per_sample != BIT_DEPTH {
            Some(format!("{} bits per sample, expected {BIT_DEPTH}", spec.bits_per_sample))
        } else {
            None
        };
        if let Some(p) = problem {
            return Err(Error::Format(format!("{}: {p}", path.display())));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: BIT_DEPTH,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for &s in &self.samples {
            w.write_sample(quantize(s))?;
        }
        w.finalize()?;
        Ok(())
    }

    /// Raw little-endian 16-bit PCM, the layout LPCNet's tools emit.
    pub fn read_raw_pcm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() % 2 != 0 {
            return Err(Error::Format(format!("{}: odd byte count for 16-bit PCM", path.display())));
        }
        let samples = bytes
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
            .collect();
        Self::new(samples, SAMPLE_RATE)
    }
}

fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_is_exact_on_the_16_bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let clip = AudioClip::new((0..400).map(|i| ((i - 200) * 97) as f64 / 32768.0).collect(), 16000).unwrap();
        clip.write_wav(&p).unwrap();
        assert_eq!(AudioClip::read_wav(&p).unwrap(), clip);
    }

    #[test]
    fn rejects_wrong_rate_and_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = AudioClip::read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("channels"), "{err}");

        let p = dir.path().join("r.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 22050,
            ..spec
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = AudioClip::read_wav(&p).unwrap_err().to_string();
        assert!(err.contains("sample rate"), "{err}");

        assert!(AudioClip::new(vec![0.0], 8000).is_err());
        assert!(AudioClip::new(vec![1.5], 16000).is_err());
    }
}
