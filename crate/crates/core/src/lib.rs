//! Bilingual and code-switched text-to-speech built from two monolingual
//! corpora.
//!
//! The crate covers the whole chain: acoustic analysis ([`dsp`]), a bilingual
//! phoneme frontend with code-switch text generation ([`text`]), a PPG
//! extractor ([`ppg`]), GMM attention ([`attention`]), the PPG-to-LPCNet voice
//! conversion network ([`vc`]), three TTS architectures ([`tts`]), vocoder
//! rendering ([`vocoder`]) and the corpus pipeline behind the `cstts` CLI
//! ([`pipeline`]).

pub mod attention;
pub mod decoder;
pub mod dsp;
pub mod error;
pub mod model_io;
pub mod nn;
pub mod pipeline;
pub mod ppg;
pub mod text;
pub mod tts;
pub mod vc;
pub mod vocoder;

pub use error::{Error, Result};
