mod common;

use caopd_core::distill::{caopd_loss_and_grad, opd_loss_and_grad, replace_target, revise_context, ConfidenceTarget};
use caopd_core::world::build_sdft_context;
use caopd_core::{RowKey, Trajectory};
use rand::Rng;

#[test]
fn answer_position_kls_identical_under_target_replacement() {
    let mut r = common::rng(4);
    let mut positions = 0;
    while positions < 1000 {
        let (world, policy) = common::random_setup(&mut r);
        let ema = policy.params().clone();
        let grid = world.grid();
        for &x in world.prompts() {
            let z = build_sdft_context(&world, x).unwrap();
            let path: Vec<_> = (0..world.answer_length()).map(|_| r.random_range(0..world.vocab()) as _).collect();
            let level = r.random_range(0..grid.len());
            let y = Trajectory { answer_path: path.clone(), confidence_token: level, log_prob: None, val_c: grid.value(level) };
            let k = r.random_range(1..=32);
            let target = ConfidenceTarget::from_counts(r.random_range(0..=k), k, &grid);
            let opd = opd_loss_and_grad(&policy, &ema, &world, x, &z, &y).unwrap();
            let ca = caopd_loss_and_grad(
                &policy,
                &ema,
                &world,
                x,
                &revise_context(&z, &target).unwrap(),
                &replace_target(&y, &target, &grid),
            )
            .unwrap();
            let t_a = path.len();
            for t in 0..t_a {
                assert_eq!(opd.position_kls[t].to_bits(), ca.position_kls[t].to_bits(), "prompt {x:?} position {t}");
                let key = RowKey::new(x, &path[..t]);
                let (a, b) = (&opd.gradient.rows[&key], &ca.gradient.rows[&key]);
                assert!(a.iter().zip(b).all(|(u, v)| u.to_bits() == v.to_bits()));
                positions += 1;
            }
            assert_eq!(opd.breakdown.capability_term.to_bits(), ca.breakdown.capability_term.to_bits());
        }
    }
}
