//! Seed derivation for reproducible runs.
//!
//! Every stochastic call site derives its own generator from the run seed
//! and a tag path (e.g. step and problem index), so results are bit-stable
//! regardless of evaluation order or parallelism.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag namespace for rollout generation streams.
pub const TAG_ROLLOUT: u64 = 0x01;
/// Tag namespace for problem bank generation.
pub const TAG_BANK: u64 = 0x02;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `(master, tags...)` into a single 64-bit stream seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for tag in tags {
        state ^= *tag;
        out = splitmix64(&mut state) ^ out.rotate_left(17);
    }
    out
}

/// A fresh generator for the given tag path under the run seed.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Generator for sampling rollouts of one problem in one step.
pub fn rollout_rng(master: u64, step: u64, problem_idx: u64) -> ChaCha8Rng {
    derive_rng(master, &[TAG_ROLLOUT, step, problem_idx])
}

/// Generator for synthesizing a problem bank.
pub fn bank_rng(master: u64) -> ChaCha8Rng {
    derive_rng(master, &[TAG_BANK])
}
