//! Seed derivation helpers.
//!
//! Everything random in the toolkit is driven by `ChaCha8Rng`, which is stable across
//! platforms and crate versions, seeded through the mixers below so that per-sample and
//! per-epoch streams are independent of processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a. Stable, unlike `std::hash::DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a per-sample stream: `seed ⊕ hash(id)`, then mixed.
pub fn sample_seed(seed: u64, id: &str) -> u64 {
    mix64(seed ^ fnv1a(id.as_bytes()))
}

/// Seed for the `index`-th derived stream of `seed` (epochs, fake copies, ...).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}
