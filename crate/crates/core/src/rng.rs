//! Deterministic random streams.
//!
//! Every stochastic draw in a filter run comes from a stream keyed by
//! `(seed, tag, step, index)`, so results do not depend on how particles are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used by the filter and the baseline ensemble.
pub mod tag {
    pub const PREDICT: u64 = 1;
    pub const PROPAGATE: u64 = 2;
    pub const RESAMPLE: u64 = 3;
    pub const BASELINE: u64 = 4;
    pub const TRUTH: u64 = 5;
    pub const TRAIN: u64 = 6;
    pub const CHECK: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator seeded from a single integer.
pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent generator for the stream `(seed, tag, step, index)`.
pub fn stream(seed: u64, tag: u64, step: u64, index: u64) -> Rng {
    let mut h = splitmix64(seed);
    for part in [tag, step, index] {
        h = splitmix64(h ^ part.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    }
    Rng::seed_from_u64(h)
}
