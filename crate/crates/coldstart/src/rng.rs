//! Seeding conventions.
//!
//! Every stochastic step in the crate draws from a ChaCha12 stream addressed
//! by `(seed, stream)`. ChaCha is counter-based, so substreams are independent
//! of each other and of iteration order, and the byte sequence is identical
//! across platforms. Worker threads receive their own stream index, which
//! makes parallel sampling schedule-invariant.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// RNG for substream `stream` of a 64-bit seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent 64-bit sub-seed from a master seed and a tag.
///
/// One SplitMix64 step on `seed ^ tag * phi64`; stable across platforms and
/// documented so runs can be reproduced outside this crate.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed tags used by the experiment pipelines.
pub mod tags {
    pub const TRAIN_ENSEMBLE: u64 = 1;
    pub const TEST_ENSEMBLE: u64 = 2;
    pub const RESERVOIR: u64 = 3;
    pub const STARTMAP_MLP: u64 = 4;
    pub const READOUT_MLP: u64 = 5;
    pub const ROBUSTNESS_NOISE: u64 = 6;
}
