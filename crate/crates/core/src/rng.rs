//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a stream keyed by a base seed and
//! a short tuple of integers (purpose tag, step, prompt index, rollout index).
//! Streams are independent of evaluation order, so parallel and sequential runs
//! produce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub const TAG_WORLD: u64 = 1;
pub const TAG_POLICY_INIT: u64 = 2;
pub const TAG_ROLLOUT: u64 = 3;
pub const TAG_DISTILL: u64 = 4;
pub const TAG_BATCH: u64 = 5;
pub const TAG_REFERENCE: u64 = 6;
pub const TAG_PERTURB: u64 = 7;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, parts: &[u64]) -> StreamRng {
    let mut h = splitmix64(seed);
    for &p in parts {
        h = splitmix64(h ^ splitmix64(p));
    }
    ChaCha8Rng::seed_from_u64(h)
}
