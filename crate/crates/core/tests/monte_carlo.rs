mod common;

use caopd_core::distill::{monte_carlo_confidence, ta_self_consistency};
use caopd_core::world::{build_sdft_context, build_world, WorldSpec};
use caopd_core::Policy;

fn three_sigma(p: f64, n: f64) -> f64 {
    3.0 * (p * (1.0 - p) / n).sqrt()
}

#[test]
fn sampled_answer_paths_follow_exact_marginals() {
    let mut spec = WorldSpec::small(2, 3, 2, 5);
    spec.difficulty_profile = vec![0.5, 0.8];
    let world = build_world(&spec).unwrap();
    let policy = Policy::from_world(&world).unwrap();
    let x = world.prompts()[1];
    let exact = policy.answer_distribution(x, None).unwrap();
    let n = 200_000;
    let mut r = common::rng(9);
    let mut counts = vec![0usize; exact.len()];
    for _ in 0..n {
        let y = policy.sample_trajectory(x, None, &mut r).unwrap();
        let i = exact.iter().position(|(a, _)| *a == y.answer_path).unwrap();
        counts[i] += 1;
    }
    for ((_, p), c) in exact.iter().zip(&counts) {
        let f = *c as f64 / n as f64;
        assert!((f - p).abs() <= three_sigma(*p, n as f64).max(1e-4), "{f} vs {p}");
    }
}

#[test]
fn empirical_success_rate_is_unbiased() {
    let mut spec = WorldSpec::small(3, 4, 1, 17);
    spec.difficulty_profile = vec![0.3, 0.6, 0.85];
    let world = build_world(&spec).unwrap();
    let policy = Policy::from_world(&world).unwrap();
    let mut r = common::rng(1);
    for &x in world.prompts() {
        let mu = policy.exact_success_prob(&world, x, None).unwrap();
        for k in [1usize, 8] {
            let draws = 10_000;
            let mean: f64 = (0..draws)
                .map(|_| monte_carlo_confidence(&policy, &world, x, k, &mut r).unwrap().raw_mu_hat)
                .sum::<f64>()
                / draws as f64;
            let sigma = (mu * (1.0 - mu) / (k * draws) as f64).sqrt();
            assert!((mean - mu).abs() <= 3.0 * sigma, "K={k}: {mean} vs {mu}");
        }
    }
}

#[test]
fn teacher_anchored_agreement_matches_cross_probability() {
    let mut spec = WorldSpec::small(2, 3, 1, 23);
    spec.difficulty_profile = vec![0.4, 0.7];
    spec.context_helpfulness = 1.2;
    let world = build_world(&spec).unwrap();
    let policy = Policy::from_world(&world).unwrap();
    let mut r = common::rng(2);
    for &x in world.prompts() {
        let z = build_sdft_context(&world, x).unwrap();
        let student = policy.answer_distribution(x, None).unwrap();
        let teacher = policy.answer_distribution(x, Some(&z)).unwrap();
        // E[agreement] = sum_a pi_T(a) pi_S(a)
        let expected: f64 = student.iter().zip(&teacher).map(|((_, s), (_, t))| s * t).sum();
        let k = 4;
        let draws = 20_000;
        let mean: f64 = (0..draws)
            .map(|_| ta_self_consistency(&policy, x, &z, k, &mut r).unwrap().raw_mu_hat)
            .sum::<f64>()
            / draws as f64;
        // variance bound: each draw lies in [0, 1]
        let sigma = (0.25 / draws as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * sigma, "{mean} vs {expected}");
    }
}
