//! Frame-level acoustic analysis: MFCCs, log-F0 and 20-dim LPCNet features,
//! all on a shared 25 ms / 10 ms framing.

pub mod audio;
pub mod extract;
pub mod f0;
pub mod pitch;
pub mod spectrum;
pub mod track;

pub use audio::AudioClip;
pub use extract::{extract_logf0, extract_lpcnet_features, extract_mfcc};
pub use f0::{denormalize_logf0, fit_f0_stats, normalize_logf0, F0Stats};
pub use spectrum::FeatureConfig;
pub use track::{FeatureKind, FeatureTrack, LPCNET_DIM};
