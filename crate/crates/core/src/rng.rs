//! Keyed deterministic randomness.
//!
//! Every stochastic choice in the crate draws from a ChaCha8 stream whose
//! 64-bit seed is derived from `(seed, purpose, a, b)` with a SplitMix64
//! mixing chain. `a` and `b` are usually an epoch or step counter and a record
//! id. Two runs with the same arguments therefore replay bit-for-bit, and
//! independent purposes never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a random stream is used for. Part of the key derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Flip = 3,
    Dropout = 4,
    Synthetic = 5,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit stream key.
pub fn derive_key(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ purpose as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b)
}

/// Generator for a derived key.
pub fn stream(key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(key)
}

/// Shorthand for `stream(derive_key(..))`.
pub fn keyed(seed: u64, purpose: Purpose, a: u64, b: u64) -> ChaCha8Rng {
    stream(derive_key(seed, purpose, a, b))
}

/// A uniform draw in `[0, 1)` that depends only on the key. Used for
/// per-record decisions that must not depend on iteration order.
pub fn unit_uniform(seed: u64, purpose: Purpose, a: u64, b: u64) -> f64 {
    // 53 high bits -> exactly representable dyadic rational in [0, 1)
    (derive_key(seed, purpose, a, b) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
