//! Reproducible stream-per-replica random numbers.
//!
//! Every stochastic routine takes a `(master_seed, stream)` pair; replica
//! `r` of an experiment uses stream `r`, so results are reproducible
//! independently of scheduling and worker count. Sub-experiments that need
//! independent randomness derive a new master with `derive_master`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// One replica's generator: ChaCha12 keyed by the master seed, positioned on
/// its own counter stream.
pub fn replica_rng(master_seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Derive an independent master seed for a labelled sub-experiment
/// (splitmix64 finalizer over the label).
pub fn derive_master(master_seed: u64, label: u64) -> u64 {
    let mut z = master_seed ^ label.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
