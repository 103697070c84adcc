//! Brier-penalized REINFORCE. A simplified baseline, not a reproduction of
//! any published RL calibration method.

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::log_softmax;
use crate::policy::{ParamMap, Policy, Position, RowKey, Trajectory};
use crate::world::{verify, PromptId, World};

pub const RLCR_LABEL: &str = "rlcr_lite_simplified_baseline";

/// `R − λ(val − R)²` with `R ∈ {0, 1}`.
pub fn brier_reward(correct: bool, val_c: f64, lambda: f64) -> f64 {
    let r = if correct { 1.0 } else { 0.0 };
    r - lambda * (val_c - r).powi(2)
}

/// Adds `scale · ∇ log π_T(y)` into `out`, `π_T` being the student at temperature `temperature`.
fn accumulate_score(
    policy: &Policy,
    x: PromptId,
    y: &Trajectory,
    temperature: f64,
    scale: f64,
    out: &mut ParamMap,
) -> Result<()> {
    let n = y.answer_path.len();
    for t in 0..=n {
        let prefix = &y.answer_path[..t];
        let logits: Vec<f64> = policy.logits(x, None, prefix)?.iter().map(|z| z / temperature).collect();
        let chosen = if t < n { y.answer_path[t] as usize } else { y.confidence_token };
        let mut g: Vec<f64> = log_softmax(&logits).into_iter().map(|l| -l.exp() / temperature).collect();
        g[chosen] += 1.0 / temperature;
        out.accumulate_row(&RowKey::new(x, prefix), &g, scale);
        if policy.position(x, prefix)? == Position::Confidence {
            out.accumulate_head(&g, scale);
        }
    }
    Ok(())
}

/// Loss gradient (negated reward gradient) from `K` rollouts of one prompt,
/// with a leave-one-out mean baseline. Returns the gradient and mean reward.
pub fn rlcr_lite_gradient(
    policy: &Policy,
    world: &World,
    x: PromptId,
    rollouts: &[Trajectory],
    lambda: f64,
    temperature: f64,
) -> Result<(ParamMap, f64)> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("brier_lambda {lambda} must be non-negative")));
    }
    if rollouts.is_empty() {
        return Err(Error::InvalidConfig("at least one rollout is required".into()));
    }
    let rewards = rollouts
        .iter()
        .map(|y| Ok(brier_reward(verify(world, x, &y.answer_path)?, y.val_c, lambda)))
        .collect::<Result<Vec<_>>>()?;
    let k = rollouts.len();
    let sum: f64 = rewards.iter().sum();
    let mut grad = ParamMap::empty(policy.grid().len());
    for (y, &r) in rollouts.iter().zip(&rewards) {
        let baseline = if k > 1 { (sum - r) / (k - 1) as f64 } else { 0.0 };
        accumulate_score(policy, x, y, temperature, -(r - baseline) / k as f64, &mut grad)?;
    }
    Ok((grad, sum / k as f64))
}

/// Samples `k` rollouts per prompt and averages the per-prompt gradients.
pub fn rlcr_lite_step(
    policy: &Policy,
    world: &World,
    batch: &[PromptId],
    k: usize,
    lambda: f64,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<(ParamMap, f64)> {
    if batch.is_empty() || k == 0 {
        return Err(Error::InvalidConfig("empty batch or K = 0".into()));
    }
    let mut total = ParamMap::empty(policy.grid().len());
    let mut reward = 0.0;
    for &x in batch {
        let rollouts = (0..k)
            .map(|_| policy.sample_trajectory_tempered(x, None, temperature, rng))
            .collect::<Result<Vec<_>>>()?;
        let (g, r) = rlcr_lite_gradient(policy, world, x, &rollouts, lambda, temperature)?;
        total.add_scaled(&g, 1.0 / batch.len() as f64);
        reward += r / batch.len() as f64;
    }
    Ok((total, reward))
}

/// `−∇ E[reward]` by enumerating every trajectory at temperature 1.
pub fn exact_policy_gradient(policy: &Policy, world: &World, x: PromptId, lambda: f64) -> Result<ParamMap> {
    let mut grad = ParamMap::empty(policy.grid().len());
    for (y, p) in policy.enumerate_trajectories(x, None)? {
        let r = brier_reward(verify(world, x, &y.answer_path)?, y.val_c, lambda);
        accumulate_score(policy, x, &y, 1.0, -p * r, &mut grad)?;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::world::{build_world, WorldSpec};

    #[test]
    fn reward_arithmetic() {
        assert!((brier_reward(true, 0.8, 1.0) - 0.96).abs() < 1e-15);
        assert_eq!(brier_reward(false, 0.0, 3.0), 0.0);
        assert_eq!(brier_reward(true, 0.2, 0.0), 1.0);
    }

    #[test]
    fn lambda_zero_ignores_confidence() {
        let world = build_world(&WorldSpec::small(1, 2, 1, 5)).unwrap();
        let p = Policy::from_world(&world).unwrap();
        let g = exact_policy_gradient(&p, &world, world.prompts()[0], 0.0).unwrap();
        // success reward is independent of c, so the confidence score terms cancel
        assert!(g.confidence_head.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn estimator_is_unbiased_on_two_path_world() {
        let mut spec = WorldSpec::small(1, 2, 1, 8);
        spec.confidence_levels = 5;
        spec.difficulty_profile = vec![0.8];
        let world = build_world(&spec).unwrap();
        let p = Policy::from_world(&world).unwrap();
        let x = world.prompts()[0];
        let lambda = 1.0;
        let exact = exact_policy_gradient(&p, &world, x, lambda).unwrap();

        let n = 100_000usize;
        let mut sum = exact.zeros_like();
        let mut sq = exact.zeros_like();
        let mut r = rng::stream(17, &[0]);
        for _ in 0..n {
            let ys: Vec<_> = (0..2).map(|_| p.sample_trajectory(x, None, &mut r).unwrap()).collect();
            let (g, _) = rlcr_lite_gradient(&p, &world, x, &ys, lambda, 1.0).unwrap();
            let mut full = exact.zeros_like();
            full.add_scaled(&g, 1.0);
            let mut g2 = full.clone();
            for (row, src) in g2.rows.values_mut().zip(full.rows.values()) {
                row.iter_mut().zip(src).for_each(|(a, b)| *a = b * b);
            }
            sum.add_scaled(&full, 1.0);
            sq.add_scaled(&g2, 1.0);
        }
        for (key, e) in &exact.rows {
            for (i, &ev) in e.iter().enumerate() {
                let m = sum.rows[key][i] / n as f64;
                let var = sq.rows[key][i] / n as f64 - m * m;
                let se = (var / n as f64).sqrt();
                assert!((m - ev).abs() <= 3.0 * se + 1e-12, "{key:?}[{i}]: {m} vs {ev} (se {se})");
            }
        }
    }
}
