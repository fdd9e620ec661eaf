//! Corpus manifests, the synthetic mini-corpus and the staged pipeline
//! behind the command-line tool.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod synth;
pub mod workspace;

pub use commands::{Pipeline, Staged, TrainTtsArgs};
pub use config::PipelineConfig;
pub use manifest::{CorpusManifest, Language, ManifestEntry};
pub use synth::{make_synthetic_corpus, SynthConfig, SyntheticCorpus, VoiceSpec};
pub use workspace::{RunRecord, Workspace};
