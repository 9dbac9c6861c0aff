//! Reproducible random streams.
//!
//! Every draw in the crate comes from an [`RngState`]: a `(seed, stream)`
//! pair naming one ChaCha keystream. Identical pairs always yield identical
//! sequences, and child streams can be derived without touching the parent,
//! so Monte Carlo work can be split into chunks whose results do not depend
//! on how many workers ran them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies one independent random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream keyed by a name, e.g. `"channel"` or `"noise1"`.
    pub fn named(seed: u64, name: &str) -> Self {
        Self::new(seed, fnv1a(name.as_bytes()))
    }

    /// Child stream `index` of this stream.
    pub fn substream(&self, index: u64) -> Self {
        Self::new(
            self.seed,
            splitmix64(self.stream ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019))),
        )
    }

    /// Child stream keyed by a name.
    pub fn child(&self, name: &str) -> Self {
        self.substream(fnv1a(name.as_bytes()))
    }

    /// Materializes the generator for this stream, positioned at its start.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
