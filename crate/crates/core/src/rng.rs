//! Seeded randomness.
//!
//! Every stream is a xoshiro256++ generator whose 256-bit state is expanded
//! from a `u64` seed with SplitMix64 (`Xoshiro256PlusPlus::seed_from_u64`).
//! Both update rules are published and small, so ports to other languages
//! reproduce the same uniform streams bit for bit.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type Rng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over `bytes`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed from a parent seed and a textual key:
/// `splitmix64(seed ^ fnv1a(key))`.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    splitmix64(seed ^ fnv1a(key.as_bytes()))
}

/// Derives a child seed from a parent seed and an integer stream index.
pub fn derive_index(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0xA5A5_A5A5)))
}
