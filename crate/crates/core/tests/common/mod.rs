#![allow(dead_code)]

use caopd_core::world::{build_world, WorldSpec};
use caopd_core::{Policy, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small random world with random policy logits and context strengths.
pub fn random_setup(r: &mut ChaCha8Rng) -> (World, Policy) {
    let vocab = r.random_range(2..=4);
    let len = r.random_range(1..=3);
    let n = r.random_range(1..=4);
    let mut spec = WorldSpec::small(n, vocab, len, r.random());
    spec.confidence_levels = r.random_range(2..=11);
    spec.difficulty_profile = (0..n).map(|_| r.random_range(0.05..0.95)).collect();
    spec.context_helpfulness = r.random_range(0.0..3.0);
    spec.context_confidence_bias = r.random_range(0.0..4.0);
    let world = build_world(&spec).unwrap();
    let mut policy = Policy::from_world(&world).unwrap();
    let p = policy.params_mut();
    for row in p.rows.values_mut() {
        for v in row.iter_mut() {
            *v = r.random_range(-2.0..2.0);
        }
    }
    for v in p.confidence_head.iter_mut() {
        *v = r.random_range(-1.0..1.0);
    }
    (world, policy)
}
