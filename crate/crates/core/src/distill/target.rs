use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ConfidenceGrid;
use crate::policy::{Policy, Trajectory};
use crate::world::{verify, PrivilegedContext, PromptId, World};

/// Empirical success rate `successes / k_used` and its grid quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTarget {
    pub raw_mu_hat: f64,
    pub grid_level: usize,
    pub k_used: usize,
    pub successes: usize,
}

impl ConfidenceTarget {
    pub fn from_counts(successes: usize, k_used: usize, grid: &ConfidenceGrid) -> Self {
        assert!(k_used >= 1 && successes <= k_used);
        Self {
            raw_mu_hat: successes as f64 / k_used as f64,
            grid_level: grid.nearest_ratio(successes, k_used),
            k_used,
            successes,
        }
    }
}

/// Target from rollouts already generated for `x`, scored by the verifier.
pub fn target_from_rollouts(world: &World, x: PromptId, rollouts: &[Trajectory]) -> Result<ConfidenceTarget> {
    if rollouts.is_empty() {
        return Err(Error::InvalidConfig("at least one rollout is required".into()));
    }
    let mut successes = 0;
    for y in rollouts {
        if verify(world, x, &y.answer_path)? {
            successes += 1;
        }
    }
    Ok(ConfidenceTarget::from_counts(successes, rollouts.len(), &world.grid()))
}

/// Draws `k` student rollouts and returns the empirical success rate.
pub fn monte_carlo_confidence(
    policy: &Policy,
    world: &World,
    x: PromptId,
    k: usize,
    rng: &mut impl Rng,
) -> Result<ConfidenceTarget> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let rollouts = (0..k)
        .map(|_| policy.sample_trajectory(x, None, rng))
        .collect::<Result<Vec<_>>>()?;
    target_from_rollouts(world, x, &rollouts)
}

/// Agreement rate of student rollouts with a reference answer path
/// (exact match stands in for semantic equivalence).
pub fn target_from_agreement(reference: &[crate::world::Token], rollouts: &[Trajectory], grid: &ConfidenceGrid) -> Result<ConfidenceTarget> {
    if rollouts.is_empty() {
        return Err(Error::InvalidConfig("at least one rollout is required".into()));
    }
    let agree = rollouts.iter().filter(|y| y.answer_path == reference).count();
    Ok(ConfidenceTarget::from_counts(agree, rollouts.len(), grid))
}

/// Verifier-free target: a reference path is drawn under the privileged
/// conditioning, then `k` student rollouts are scored by agreement with it.
pub fn ta_self_consistency(
    policy: &Policy,
    x: PromptId,
    context: &PrivilegedContext,
    k: usize,
    rng: &mut impl Rng,
) -> Result<ConfidenceTarget> {
    if context.is_none() {
        return Err(Error::InvalidContext("teacher-anchored target needs a privileged context".into()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let reference = policy.sample_trajectory(x, Some(context), rng)?.answer_path;
    let rollouts = (0..k)
        .map(|_| policy.sample_trajectory(x, None, rng))
        .collect::<Result<Vec<_>>>()?;
    target_from_agreement(&reference, &rollouts, &policy.grid())
}

/// Overwrites the confidence token with the target level; the answer path is
/// untouched and the stale log-probability is cleared.
pub fn replace_target(y: &Trajectory, target: &ConfidenceTarget, grid: &ConfidenceGrid) -> Trajectory {
    Trajectory {
        answer_path: y.answer_path.clone(),
        confidence_token: target.grid_level,
        log_prob: None,
        val_c: grid.value(target.grid_level),
    }
}

/// Overwrites the declared confidence of a privileged context.
pub fn revise_context(z: &PrivilegedContext, target: &ConfidenceTarget) -> Result<PrivilegedContext> {
    if z.is_none() {
        return Err(Error::InvalidContext("cannot revise an empty context".into()));
    }
    Ok(PrivilegedContext {
        declared_confidence: Some(target.grid_level),
        ..z.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::world::{build_sdft_context, build_world, ContextKind, WorldSpec};
    use proptest::prelude::*;

    fn grid() -> ConfidenceGrid {
        ConfidenceGrid::new(20).unwrap()
    }

    fn traj(path: Vec<u16>, level: usize) -> Trajectory {
        Trajectory {
            answer_path: path,
            confidence_token: level,
            log_prob: Some(-1.0),
            val_c: grid().value(level),
        }
    }

    fn deterministic(world: &World, correct: bool) -> Policy {
        let mut p = Policy::from_world(world).unwrap();
        for (k, row) in p.params_mut().rows.iter_mut() {
            if k.prefix.len() < world.answer_length() {
                let truth = world.truth(k.prompt).unwrap()[k.prefix.len()] as usize;
                let pick = if correct { truth } else { (truth + 1) % row.len() };
                row.iter_mut().for_each(|z| *z = 0.0);
                row[pick] = 1e3;
            }
        }
        p.set_context_biases(0.0, 0.0);
        p
    }

    #[test]
    fn counts_become_raw_rate() {
        let t = ConfidenceTarget::from_counts(6, 8, &grid());
        assert_eq!(t.raw_mu_hat, 0.75);
        assert_eq!(t.grid_level, 15);
    }

    #[test]
    fn deterministic_correct_policy_gets_full_target() {
        let world = build_world(&WorldSpec::small(2, 4, 2, 1)).unwrap();
        let p = deterministic(&world, true);
        let mut rng = rng::stream(0, &[1]);
        for k in [1, 3, 8] {
            let t = monte_carlo_confidence(&p, &world, world.prompts()[0], k, &mut rng).unwrap();
            assert_eq!(t.raw_mu_hat, 1.0);
        }
        assert!(monte_carlo_confidence(&p, &world, world.prompts()[0], 0, &mut rng).is_err());
    }

    #[test]
    fn teacher_anchored_target_on_deterministic_policies() {
        let world = build_world(&WorldSpec::small(2, 4, 1, 2)).unwrap();
        let x = world.prompts()[0];
        let z = build_sdft_context(&world, x).unwrap();
        let mut rng = rng::stream(0, &[2]);

        // student deterministically wrong, teacher pulled hard onto the truth
        let mut p = deterministic(&world, false);
        p.set_context_biases(1e4, 0.0);
        let t = ta_self_consistency(&p, x, &z, 8, &mut rng).unwrap();
        assert_eq!((t.successes, t.k_used, t.raw_mu_hat), (0, 8, 0.0));

        let same = deterministic(&world, true);
        assert_eq!(ta_self_consistency(&same, x, &z, 8, &mut rng).unwrap().raw_mu_hat, 1.0);
        assert!(ta_self_consistency(&same, x, &PrivilegedContext::none(), 8, &mut rng).is_err());
    }

    #[test]
    fn replacement_examples() {
        let g = grid();
        let y = traj(vec![1, 2], 20);
        let full = ConfidenceTarget::from_counts(8, 8, &g);
        let same = replace_target(&y, &full, &g);
        assert_eq!(same.answer_path, y.answer_path);
        assert_eq!(same.confidence_token, 20);
        assert_eq!(same.log_prob, None);

        let y = traj(vec![3], 19);
        assert_eq!(y.val_c, 0.95);
        let low = ConfidenceTarget { raw_mu_hat: 0.1, grid_level: 2, k_used: 10, successes: 1 };
        let out = replace_target(&y, &low, &g);
        assert_eq!(out.val_c, 0.1);
        assert_eq!(out.answer_path, vec![3]);
    }

    #[test]
    fn context_revision_examples() {
        let world = build_world(&WorldSpec::small(1, 4, 2, 3)).unwrap();
        let z = build_sdft_context(&world, world.prompts()[0]).unwrap();
        let t = ConfidenceTarget::from_counts(4, 5, &grid());
        let r = revise_context(&z, &t).unwrap();
        assert_eq!(grid().value(r.declared_confidence.unwrap()), 0.8);
        assert_eq!(r.demonstrated_path, z.demonstrated_path);
        assert_eq!(r.kind, ContextKind::Demonstration);

        let full = ConfidenceTarget::from_counts(8, 8, &grid());
        assert_eq!(revise_context(&z, &full).unwrap(), z);
        assert!(revise_context(&PrivilegedContext::none(), &t).is_err());
    }

    #[test]
    fn single_rollout_targets_are_binary_and_k8_on_eighths() {
        let mut spec = WorldSpec::small(3, 3, 1, 4);
        spec.difficulty_profile = vec![0.6];
        let world = build_world(&spec).unwrap();
        let p = Policy::from_world(&world).unwrap();
        let mut rng = rng::stream(9, &[9]);
        for _ in 0..200 {
            for &x in world.prompts() {
                let t1 = monte_carlo_confidence(&p, &world, x, 1, &mut rng).unwrap();
                assert!(t1.raw_mu_hat == 0.0 || t1.raw_mu_hat == 1.0);
                let t8 = monte_carlo_confidence(&p, &world, x, 8, &mut rng).unwrap();
                assert_eq!((t8.raw_mu_hat * 8.0).fract(), 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn replacement_never_touches_answers(path in proptest::collection::vec(0u16..16, 1..4), level in 0usize..21, s in 0usize..9) {
            let g = grid();
            let y = traj(path.clone(), level);
            let t = ConfidenceTarget::from_counts(s.min(8), 8, &g);
            prop_assert_eq!(replace_target(&y, &t, &g).answer_path, path.clone());
            let z = PrivilegedContext { kind: ContextKind::Demonstration, demonstrated_path: Some(path.clone()), declared_confidence: Some(level) };
            prop_assert_eq!(revise_context(&z, &t).unwrap().demonstrated_path, Some(path));
        }

        #[test]
        fn grid_level_is_nearest_with_ties_up(k in 1usize..40, s_frac in 0.0f64..=1.0) {
            let g = grid();
            let s = ((k as f64) * s_frac).floor() as usize;
            let t = ConfidenceTarget::from_counts(s, k, &g);
            prop_assert_eq!(t.raw_mu_hat, s as f64 / k as f64);
            // brute force over the grid using exact rational distances |l/G - s/k|
            let best = (0..g.len())
                .min_by(|&a, &b| {
                    let da = ((a * k) as i64 - (s * 20) as i64).abs();
                    let db = ((b * k) as i64 - (s * 20) as i64).abs();
                    da.cmp(&db).then(b.cmp(&a))
                })
                .unwrap();
            prop_assert_eq!(t.grid_level, best);
        }
    }
}
