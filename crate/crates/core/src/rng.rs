//! Deterministic seed derivation.
//!
//! Every randomized stage (frame simulation, beam super-sampling, batch
//! selection, weight init) owns an independent ChaCha stream derived from the
//! run seed plus stage/index tags, so work items can be processed in parallel
//! and in any order while staying bit-reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stage tags keep the derived streams of unrelated pipeline stages apart
/// even when their indices coincide.
pub mod tag {
    pub const SIMULATE: u64 = 0x51;
    pub const MODEL_INIT: u64 = 0x1D;
    pub const BATCH: u64 = 0xBA;
    pub const BEAM: u64 = 0xBE;
    pub const SYNTH: u64 = 0x5E;
}

/// SplitMix64 finalizer; a well-mixed 64-bit permutation.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed and two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(base).wrapping_add(a)).wrapping_add(b))
}

/// An independent RNG stream for one work item.
pub fn stream(base: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, a, b))
}
