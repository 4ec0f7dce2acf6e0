//! Cross-modal deep metric learning with multi-task regularization.
//!
//! Images and texts are first mapped to shallow shared representations by a
//! base network (per-modality DBNs feeding a bimodal autoencoder). A
//! two-pathway fully-connected network is then trained on top of those
//! representations with two simultaneously optimized losses:
//!
//! - a semi-supervised contrastive loss over labeled pairs (label agreement)
//!   and unlabeled pairs (online mini-batch cross-modal kNN graph);
//! - a quadruplet ranking loss over labeled `(I+, T+, I-, T-)` tuples.
//!
//! Gradients of both loss branches are summed at the top of the shared trunk.
//! Retrieval quality is measured with mean average precision over cosine
//! distance rankings.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, configuration
//! and the command line live in the `xmmr` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod base_net;
pub mod error;
pub mod graph;
pub mod losses;
pub mod metric_net;
pub mod nd;
pub mod retrieval;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
pub use nd::{AffineLayer, Matrix, OptimizerConfig};

/// Class identifier attached to labeled samples.
pub type Label = i64;

/// Deterministic random source used throughout the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's random source from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed for a named stream (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
