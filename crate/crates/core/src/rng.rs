//! Seed derivation. Every random decision in a run is drawn from a ChaCha
//! stream whose seed is derived from the run seed plus a (epoch, lane) pair,
//! so results never depend on thread timing when the scheme itself is
//! deterministic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for lane `lane` (block id, worker, ...) of epoch `epoch`.
pub fn derive_seed(seed: u64, epoch: usize, lane: usize) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(epoch as u64)) ^ lane as u64)
}

/// Seed used to shuffle the whole sample array before epoch `epoch`.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    derive_seed(seed, epoch, 0)
}

pub fn rng_from(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
