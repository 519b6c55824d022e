//! Seed streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream derived from the
//! run seed and a tag path, so adding a consumer never perturbs another and
//! parallel blocks draw from fixed, independent streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Returns the generator for `seed` restricted to the stream named by `tags`.
pub fn stream(seed: u64, tags: &[u64]) -> Rng {
    let mut id = 0x5eed_u64;
    for &t in tags {
        id = splitmix64(id ^ t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Well-known stream tags.
pub mod tags {
    pub const INIT: u64 = 1;
    pub const TRAIN_EPISODES: u64 = 2;
    pub const VAL_EPISODES: u64 = 3;
    pub const EVAL_EPISODES: u64 = 4;
    pub const SPLITS: u64 = 5;
    pub const ASSIGNMENT: u64 = 6;
    pub const SIM_MEANS: u64 = 7;
    pub const SIM_EPISODES: u64 = 8;
    pub const SIM_DISTANCE: u64 = 9;
    pub const SYNTHETIC: u64 = 10;
}
