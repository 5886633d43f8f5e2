//! Seeded random streams.
//!
//! Every randomized operation takes a [`ChaCha8Rng`] derived from a
//! `(seed, tag)` pair, so concurrent jobs never share a generator and results
//! do not depend on scheduling order.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed_bytes(seed, tag))
}

/// Child seed for a numbered sub-job, e.g. scenario `index` of a suite.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

fn derive_seed_bytes(seed: u64, tag: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0xff]);
    h.update(tag.as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}
