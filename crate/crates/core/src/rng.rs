//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 generators keyed by a 64-bit seed. Child
//! seeds are derived with a SplitMix64 finalizer so that independent streams
//! (train/test sets, replications, validation splits) never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for `(seed, index)`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Child seed for a named purpose, e.g. `labelled_seed(seed, "test-set")`.
pub fn labelled_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    sub_seed(seed, h)
}
