//! Stable seed derivation.
//!
//! Every random stream is derived from a master seed plus a label, so adding a
//! new stage or item never shifts the streams of existing ones. The hash is
//! FNV-1a followed by a SplitMix64 finaliser; both are fixed here rather than
//! borrowed from `std::hash`, whose output is not stable across releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `hash(master, label)`.
pub fn derive(master: u64, label: &str) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(master);
    h.write(label.as_bytes());
    splitmix64(h.finish())
}

/// `hash(master, label, indices...)` for per-item streams.
pub fn derive_indexed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(master);
    h.write(label.as_bytes());
    for &i in indices {
        h.write_u64(i);
    }
    splitmix64(h.finish())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
