//! Keyed random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose key is a
//! hash of `(seed, label, indices...)`. Two draws with different keys are
//! independent, and the same key always reproduces the same stream, no matter
//! which thread asks for it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type KeyedRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over raw bytes.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable numeric tag for a stream label.
pub fn label(name: &str) -> u64 {
    fnv1a(name.as_bytes())
}

/// Fold `parts` into `seed`. Order-sensitive.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn stream(seed: u64, name: &str, parts: &[u64]) -> KeyedRng {
    let mut all = Vec::with_capacity(parts.len() + 1);
    all.push(label(name));
    all.extend_from_slice(parts);
    ChaCha8Rng::seed_from_u64(derive(seed, &all))
}
