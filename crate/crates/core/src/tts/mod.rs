//! Phoneme-to-LPCNet text-to-speech: Tacotron2, Transformer and FastSpeech
//! models, duration extraction from attention, and code-switched data
//! augmentation.

pub mod augment;
pub mod blocks;
pub mod duration;
pub mod fastspeech;
pub mod model;
pub mod tacotron;
pub mod transformer;

pub use augment::{augment_with_code_switch, extract_durations, AugmentReport, DurationReport};
pub use duration::DurationSequence;
pub use model::{synthesize, train_tts, SynthesisOptions, Synthesized, TtsArch, TtsConfig, TtsExample, TtsModel};
