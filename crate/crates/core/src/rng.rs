//! Seeded, splittable randomness.
//!
//! Every consumer asks a [`SeedTree`] for a stream by label; the label is mixed
//! into the root seed, so adding a new consumer never shifts the draws of the
//! existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// A subtree whose streams are independent of the parent's.
    pub fn child(&self, label: &str) -> SeedTree {
        SeedTree::new(mix(self.seed, label, 0))
    }

    /// Indexed subtree, e.g. one per entity or per epoch.
    pub fn child_indexed(&self, label: &str, index: u64) -> SeedTree {
        SeedTree::new(mix(self.seed, label, index.wrapping_add(1)))
    }

    pub fn stream(&self, label: &str) -> StreamRng {
        ChaCha8Rng::seed_from_u64(mix(self.seed, label, u64::MAX))
    }

    pub fn stream_indexed(&self, label: &str, index: u64) -> StreamRng {
        self.child_indexed(label, index).stream("")
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(seed: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then splitmix to diffuse.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(index))
}
