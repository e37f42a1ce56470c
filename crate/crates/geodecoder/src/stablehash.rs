//! Platform-stable hashing for split assignment and counter-based RNG.
//!
//! `std::hash::DefaultHasher` makes no stability promises across releases, so
//! anything that must reproduce byte for byte goes through these instead.

/// FNV-1a over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates structured integer keys.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Combines a key and an index into one hash; used for per-element dropout.
pub fn mix2(key: u64, idx: u64) -> u64 {
    mix64(key ^ mix64(idx))
}

/// Maps a hash to a uniform float in [0, 1) using the top 53 bits.
pub fn unit_f64(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
