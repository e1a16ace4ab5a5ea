//! Seed derivation. Every random stream in a run is a ChaCha8 generator
//! keyed by the global seed plus a stable hash of its purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and compiler versions, unlike
/// `std::collections::hash_map::DefaultHasher`.
#[derive(Debug, Clone)]
pub struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = Fnv::new();
    h.write(bytes);
    h.finish()
}

/// Generator for `(seed, purpose, epoch, key)`.
pub fn stream(seed: u64, purpose: &str, epoch: u64, key: &str) -> Rng {
    let mut h = Fnv::new();
    h.write(&seed.to_le_bytes());
    h.write(purpose.as_bytes());
    h.write(&[0xff]);
    h.write(&epoch.to_le_bytes());
    h.write(key.as_bytes());
    Rng::seed_from_u64(h.finish())
}
