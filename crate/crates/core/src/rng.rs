//! Seed derivation. Every random stream in the crate is a pure function of a
//! base seed and a short path of integers (trial, step, resample, ...).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream_rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

// Domain-separation tags so different consumers of one seed never share a stream.
pub(crate) const TAG_NOISE: u64 = 0x006e_6f69_7365;
pub(crate) const TAG_SCHEDULE: u64 = 0x0073_6368_6564;
pub(crate) const TAG_BOOTSTRAP: u64 = 0x626f_6f74;
pub(crate) const TAG_GRID: u64 = 0x6772_6964;
pub(crate) const TAG_SAMPLE: u64 = 0x7361_6d70;
