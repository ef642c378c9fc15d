//! Seed derivation.
//!
//! Every random stream in a run (initialization, partitioning, per-client
//! shuffles, latency draws) is keyed off the run seed plus a small tuple of
//! tags, so that two streams never alias and adding a new stream does not
//! perturb existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a sequence of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

/// Stream tags. Kept as constants so call sites read as intent.
pub(crate) mod stream {
    pub const INIT: u64 = 0x1;
    pub const PARTITION: u64 = 0x2;
    pub const EVAL_SPLIT: u64 = 0x3;
    pub const CLIENT: u64 = 0x4;
    pub const LATENCY: u64 = 0x5;
    pub const DROPOUT: u64 = 0x6;
    pub const SYNTHETIC: u64 = 0x7;
}

/// Seed for a client's local shuffles in a run seeded with `base`.
pub fn client_seed(base: u64, client_id: u16) -> u64 {
    derive_seed(base, &[stream::CLIENT, client_id as u64])
}

pub fn rng_from(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
