//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed and a fixed stream id, so adding or removing one consumer never
//! shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids. Values are part of the reproducibility contract; never reorder.
pub mod stream {
    pub const INIT_ENC_C: u64 = 1;
    pub const INIT_ENC_D: u64 = 2;
    pub const INIT_DEC_C: u64 = 3;
    pub const INIT_DEC_D: u64 = 4;
    pub const INIT_CLS: u64 = 5;
    pub const INIT_SHARED: u64 = 6;
    pub const SHUFFLE: u64 = 10;
    pub const EPS_C: u64 = 11;
    pub const EPS_D: u64 = 12;
    pub const INIT_GEN_C: u64 = 20;
    pub const INIT_GEN_D: u64 = 21;
    pub const INIT_DISC_C: u64 = 22;
    pub const INIT_DISC_D: u64 = 23;
    pub const GAN_BATCH: u64 = 24;
    pub const GAN_NOISE: u64 = 25;
    pub const GAN_LABELS: u64 = 26;
    pub const DP_NOISE: u64 = 27;
    pub const SAMPLE_NOISE_C: u64 = 30;
    pub const SAMPLE_NOISE_D: u64 = 31;
    pub const SAMPLE_LABELS: u64 = 32;
    pub const FIXTURE: u64 = 40;
    pub const SPLIT: u64 = 50;
    pub const AUGMENT: u64 = 51;
    pub const CLASSIFIER: u64 = 52;
    pub const EXPERIMENT: u64 = 60;
}

/// Deterministic generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with an index, for per-iteration or per-replicate sub-seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
