//! Keyed random streams.
//!
//! Every random decision in a run draws from a generator keyed by the run seed
//! and a tuple of integers naming the decision (stream tag, round, stratum,
//! agent, ...). Outputs therefore never depend on evaluation order, which is
//! what makes resumed and parallel runs bit-identical to sequential ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Public so tests can replay a draw independently.
pub mod stream {
    pub const POPULATION: u64 = 0x01;
    pub const EXPANSION_ANCHOR: u64 = 0x02;
    pub const EXPANSION_PERTURB: u64 = 0x03;
    pub const GRAPH: u64 = 0x10;
    pub const KERNEL_WEIGHTS: u64 = 0x20;
    pub const KERNEL_SAMPLE: u64 = 0x21;
    pub const PARTITION: u64 = 0x30;
    pub const PROTOTYPES: u64 = 0x40;
    pub const AUDIT: u64 = 0x50;
    pub const BASELINE: u64 = 0x60;
    pub const BOOTSTRAP: u64 = 0x70;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a seed and key parts into a single 64-bit stream seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn keyed_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}
