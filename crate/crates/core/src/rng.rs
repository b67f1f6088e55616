//! Counter-based random streams.
//!
//! Every random quantity in a simulation is drawn from a stream whose seed is
//! a pure function of a path of integers: `(master seed, replica, vertex path)`
//! for trees and `(master seed, replicate, step, particle)` for pools. Results
//! are therefore independent of evaluation order and thread count, and a tree
//! sampled to depth `n` is the truncation of the same tree sampled deeper.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const ROOT_SALT: u64 = 0x243F_6A88_85A3_08D3;
const CHILD_SALT: u64 = 0x632B_E59B_D9B4_E019;

/// The splitmix64 output function: a bijective avalanche mixer.
#[inline]
pub const fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one random stream in the hierarchy of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub const fn new(seed: u64) -> Self {
        StreamKey(mix64(seed ^ ROOT_SALT))
    }

    /// Key of the `index`-th child stream.
    #[inline]
    pub const fn child(self, index: u64) -> Self {
        let salt = mix64(index.wrapping_mul(GOLDEN).wrapping_add(CHILD_SALT));
        StreamKey(mix64(self.0.rotate_left(23) ^ salt))
    }

    #[inline]
    pub fn rng(self) -> SplitMix64 {
        SplitMix64::seed_from_u64(self.0)
    }

    pub const fn value(self) -> u64 {
        self.0
    }
}

/// Seed of replica `index` under a master seed.
pub fn replica_seed(master: u64, index: u64) -> u64 {
    StreamKey::new(master).child(index).value()
}
