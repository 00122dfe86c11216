//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a `(base seed, tag, index)` triple so results never depend on
//! call order or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Derives an independent sub-seed for the stream named `tag`, item `index`.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(base ^ fnv1a(tag)) ^ splitmix64(index.wrapping_add(0x5851_F42D)))
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
