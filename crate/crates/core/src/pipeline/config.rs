use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::SynthConfig;
use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::ppg::PpgConfig;
use crate::text::BilingualLexicon;
use crate::tts::TtsConfig;
use crate::vc::VcConfig;
use crate::vocoder::VocoderSpec;

/// Quality bars checked after training stages. Misses are logged and
/// recorded, not fatal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub frame_accuracy: f64,
    pub mse: f64,
    pub diagonality: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { frame_accuracy: 0.99, mse: 0.05, diagonality: 0.9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Span replacement probability when generating code-switched text.
    pub rate: f64,
    /// Independently seeded passes over the source sentences; duplicates
    /// are dropped.
    pub variants: usize,
    /// Cap on generated sentences; 0 keeps all.
    pub max_sentences: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { rate: 0.5, variants: 4, max_sentences: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Per-utterance worker threads; 0 uses all cores.
    pub workers: usize,
    pub features: FeatureConfig,
    pub corpus: SynthConfig,
    pub ppg: PpgConfig,
    pub vc: VcConfig,
    pub tts: TtsConfig,
    /// Epochs of continued training when refining on augmented data.
    pub refine_epochs: usize,
    pub augment: AugmentConfig,
    /// Utterances used to pick the attention head for durations; 0 uses all.
    pub duration_selection: usize,
    pub vocoder: VocoderSpec,
    pub thresholds: Thresholds,
    /// English pronunciation lexicon; the built-in demo lexicon if unset.
    pub lexicon: Option<PathBuf>,
    pub translations: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            features: FeatureConfig::default(),
            corpus: SynthConfig::default(),
            ppg: PpgConfig::default(),
            vc: VcConfig::default(),
            tts: TtsConfig { epochs: 400, ..TtsConfig::default() },
            refine_epochs: 40,
            augment: AugmentConfig::default(),
            duration_selection: 0,
            vocoder: VocoderSpec::default(),
            thresholds: Thresholds::default(),
            lexicon: None,
            translations: None,
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Applies a global seed to every seeded component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.ppg.seed = seed;
        self.vc.seed = seed;
        self.tts.seed = seed;
        self.vocoder.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.corpus.validate()?;
        self.tts.validate()?;
        self.vc.decoder.validate()?;
        self.vocoder.validate()?;
        if self.vc.downsample == 0 {
            return Err(Error::Config("downsampling factor must be >= 1".into()));
        }
        if self.ppg.input_dim != self.features.n_mfcc {
            return Err(Error::Config(format!(
                "PPG input width {} differs from {} MFCCs",
                self.ppg.input_dim, self.features.n_mfcc
            )));
        }
        if self.vc.ppg_dim != self.ppg.senones {
            return Err(Error::Config(format!("VC expects {}-dim PPGs but there are {} senones", self.vc.ppg_dim, self.ppg.senones)));
        }
        if self.corpus.senones > self.ppg.senones {
            return Err(Error::Config("synthetic corpus labels exceed the senone inventory".into()));
        }
        if !(self.augment.rate > 0.0 && self.augment.rate <= 1.0) {
            return Err(Error::Config("augmentation rate must be in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn lexicon(&self) -> Result<BilingualLexicon> {
        match &self.lexicon {
            Some(p) => BilingualLexicon::load(p, self.translations.as_deref()),
            None => Ok(BilingualLexicon::demo()),
        }
    }
}
