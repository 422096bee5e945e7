//! Stream derivation for reproducible runs.
//!
//! Every pipeline stage and every parallel work unit draws from its own
//! ChaCha8 stream whose seed is a pure function of
//! `(master_seed, stage tag, unit index)`. Results therefore do not depend on
//! thread count or scheduling. The mixing below is frozen: changing it
//! changes every published output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stage tags used by the pipeline.
pub mod tag {
    pub const EXIT_MASS: &str = "exit-mass";
    pub const FLEMING_VIOT: &str = "fleming-viot";
    pub const TREE_BENCHMARK: &str = "tree-benchmark";
    pub const TREE_BIASED: &str = "tree-biased";
    pub const TREE_NODE: &str = "tree-node";
    pub const REALIZATION: &str = "realization";
    pub const REALIZATION_BATCH: &str = "realization-batch";
    pub const REPLICATION: &str = "replication";
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

// FNV-1a, 64 bit.
fn hash_tag(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ hash_tag(tag)) ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(master: u64, tag: &str, index: u64) -> Stream {
    stream(derive_seed(master, tag, index))
}
