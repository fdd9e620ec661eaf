//! Minimal neural-network toolkit: a tape autodiff, parameter storage with
//! Adam, and the layers the acoustic models are assembled from.

pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use graph::{Graph, Mat, Var};
pub use layers::{
    positional_encoding, BiRnn, Conv1d, Embedding, GruCell, LayerNorm, Linear, LstmCell, MultiHeadAttention, PostNet,
    RnnKind,
};
pub use params::{Adam, AdamConfig, ParamId, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adds uniform noise in `[-amount, amount]` to every parameter.
pub fn jitter(store: &mut ParamStore, amount: f64, rng: &mut ChaCha8Rng) {
    use rand::Rng;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        store.value_mut(id).mapv_inplace(|v| v + rng.gen_range(-amount..amount));
    }
}
