//! Per-sample seed derivation.
//!
//! Every random decision in the generators is drawn from a generator seeded
//! by `(run seed, sample index, stream tag)`, never from a shared stream, so
//! that output does not depend on evaluation order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random stream used by generators.
pub type SampleRng = ChaCha8Rng;

/// Stream tags separating independent uses of the same `(seed, index)`.
pub mod stream {
    pub const GRID: u64 = 0x6772_6964;
    pub const CSS_PARTNER: u64 = 0x6373_7370;
    pub const CSS_COIN: u64 = 0x6373_636e;
    pub const COPY_PASTE: u64 = 0x6370_7374;
    pub const MOSAIC: u64 = 0x6d6f_7361;
    pub const PIPELINE: u64 = 0x7069_7065;
    pub const SAMPLING: u64 = 0x7361_6d70;
    pub const EMBEDDING: u64 = 0x656d_6264;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a run seed, a sample index and a stream tag into one 64-bit seed.
pub fn derive_seed(seed: u64, index: u64, tag: u64) -> u64 {
    let h = splitmix64(seed);
    let h = splitmix64(h ^ index.rotate_left(17));
    splitmix64(h ^ tag.rotate_left(41))
}

/// Generator for one `(seed, index, tag)` triple.
pub fn sample_rng(seed: u64, index: u64, tag: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index, tag))
}
