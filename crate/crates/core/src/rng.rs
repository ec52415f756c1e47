//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by a master seed mixed with a stream id.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub mod stream {
    pub const GENERATE: u64 = 0x01;
    pub const ORACLE: u64 = 0x02;
    pub const FOLDS: u64 = 0x03;
    pub const BOOTSTRAP: u64 = 0x04;
    pub const SPLIT: u64 = 0x05;
    pub const JACKKNIFE: u64 = 0x06;
    pub const METRIC_BOOTSTRAP: u64 = 0x07;
}

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream id.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng_for(seed: u64, stream: u64) -> StreamRng {
    StreamRng::seed_from_u64(mix_seed(seed, stream))
}
