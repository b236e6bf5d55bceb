//! Splittable RNG streams.
//!
//! Every random decision in the crate is drawn from a stream identified by a
//! [`StreamKey`]: a 64-bit state derived from the user seed and a path of
//! child indices (pattern index, point index, permutation index, ...).
//! Streams are pure values, so any parallel schedule that assigns the same
//! key to the same task reproduces the same draws bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a cheap, well-mixed 64-bit hash.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key identifying one stream in a deterministic tree rooted at a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    /// Root of the stream tree for a user-facing seed.
    pub fn root(seed: u64) -> Self {
        StreamKey(mix(seed))
    }

    /// Derive the `index`-th child stream.
    pub fn child(self, index: u64) -> Self {
        StreamKey(mix(self.0 ^ mix(index)))
    }

    /// Instantiate the generator for this stream.
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
