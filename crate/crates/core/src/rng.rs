//! Seeded random streams.
//!
//! A run has one master seed. Every component draws from its own ChaCha
//! stream whose id is a hash of the component name, so adding a component
//! never shifts the numbers another component sees.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// 64-bit FNV-1a.
pub fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Independent generator for the named component.
    pub fn stream(&self, name: &str) -> Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.master);
        rng.set_stream(stream_id(name));
        rng
    }
}

/// Generator seeded directly, for call sites without a seed tree.
pub fn seeded(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
