use crate::error::Result;
use crate::metrics::{CalibrationReport, PredictionRecord};
use crate::policy::Policy;
use crate::world::{verify, World};

/// One weighted record per `(x, a, c)` with mass `w(x)·π(a, c | x)`; zero-mass entries dropped.
pub fn exact_records(policy: &Policy, world: &World) -> Result<Vec<PredictionRecord>> {
    let mut out = Vec::new();
    for &x in world.prompts() {
        let w = world.weight(x)?;
        if w == 0.0 {
            continue;
        }
        for (y, p) in policy.enumerate_trajectories(x, None)? {
            let mass = w * p;
            if mass > 0.0 {
                out.push(PredictionRecord::weighted(y.val_c, verify(world, x, &y.answer_path)?, mass)?);
            }
        }
    }
    Ok(out)
}

/// `Σ_x w(x) μ(x)`.
pub fn exact_accuracy(policy: &Policy, world: &World) -> Result<f64> {
    let mut acc = 0.0;
    for &x in world.prompts() {
        acc += world.weight(x)? * policy.exact_success_prob(world, x, None)?;
    }
    Ok(acc)
}

/// `Σ_x w(x) E[val(c) | x]` under the student.
pub fn exact_mean_confidence(policy: &Policy, world: &World) -> Result<f64> {
    let mut conf = 0.0;
    for &x in world.prompts() {
        conf += world.weight(x)? * policy.exact_mean_confidence(x, None)?;
    }
    Ok(conf)
}

pub fn exact_report(policy: &Policy, world: &World, num_bins: usize) -> Result<CalibrationReport> {
    CalibrationReport::from_records(&exact_records(policy, world)?, num_bins)
}
