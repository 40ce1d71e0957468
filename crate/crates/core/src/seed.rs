//! Keyed seed derivation so that every random draw is addressed by what it
//! is for (video, clip, iteration, purpose) rather than by call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`, order-sensitively.
pub fn derive(base: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(base), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, parts))
}

/// Purpose tags.
pub mod tag {
    pub const SCENE: u64 = 1;
    pub const DEGRADE: u64 = 2;
    pub const TRAIN_BATCH: u64 = 3;
    pub const TRAIN_NOISE: u64 = 4;
    pub const LATENT: u64 = 5;
    pub const TUBELET: u64 = 6;
    pub const ADAPT_NOISE: u64 = 7;
    pub const TIMESTEP: u64 = 8;
    pub const SPLIT: u64 = 9;
}
