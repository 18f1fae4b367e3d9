//! Deterministic seed derivation for parallel Monte-Carlo work.
//!
//! Every replication draws from its own generator whose seed is a pure
//! function of the base seed and a list of integer keys (cell id,
//! replication id, ...). Results therefore do not depend on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a base seed with a sequence of keys into a new 64-bit seed.
pub fn derive_seed(base: u64, keys: &[u64]) -> u64 {
    let mut state = mix64(base.wrapping_add(GOLDEN_GAMMA));
    for &k in keys {
        state = mix64(state ^ mix64(k.wrapping_add(GOLDEN_GAMMA)));
    }
    state
}

/// Generator for the stream identified by `(base, keys)`.
pub fn stream_rng(base: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, keys))
}
