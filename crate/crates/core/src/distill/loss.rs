use serde::{Deserialize, Serialize};

use super::kl::reverse_kl_and_grad;
use crate::error::Result;
use crate::math::softmax;
use crate::policy::{ParamMap, Policy, Position, RowKey, Trajectory};
use crate::world::{PrivilegedContext, PromptId, Token, World};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Summed KL over answer positions.
    pub capability_term: f64,
    /// KL at the confidence position.
    pub calibration_term: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.capability_term += other.capability_term;
        self.calibration_term += other.calibration_term;
        self.total += other.total;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            capability_term: self.capability_term * s,
            calibration_term: self.calibration_term * s,
            total: self.total * s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillLoss {
    pub breakdown: LossBreakdown,
    /// Sparse: only rows touched by this trajectory (plus the shared head).
    pub gradient: ParamMap,
    /// One KL per position, answer positions first.
    pub position_kls: Vec<f64>,
}

/// Per-position reverse KL between the student (no context) and the EMA
/// teacher (with `z`) along the prefixes of `answer_path`.
pub fn distill_loss(
    policy: &Policy,
    ema: &ParamMap,
    x: PromptId,
    z: &PrivilegedContext,
    answer_path: &[Token],
) -> Result<DistillLoss> {
    let head_len = policy.grid().len();
    let mut gradient = ParamMap::empty(head_len);
    let mut breakdown = LossBreakdown::default();
    let mut position_kls = Vec::with_capacity(answer_path.len() + 1);
    for t in 0..=answer_path.len() {
        let prefix = &answer_path[..t];
        let student = policy.logits(x, None, prefix)?;
        let teacher = softmax(&policy.logits_with(ema, x, Some(z), prefix)?);
        let (kl, grad) = reverse_kl_and_grad(&student, &teacher)?;
        gradient.accumulate_row(&RowKey::new(x, prefix), &grad, 1.0);
        match policy.position(x, prefix)? {
            Position::Answer(_) => breakdown.capability_term += kl,
            Position::Confidence => {
                gradient.accumulate_head(&grad, 1.0);
                breakdown.calibration_term += kl;
            }
        }
        position_kls.push(kl);
    }
    breakdown.total = breakdown.capability_term + breakdown.calibration_term;
    Ok(DistillLoss { breakdown, gradient, position_kls })
}

/// Standard objective: the teacher sees the untouched context.
pub fn opd_loss_and_grad(
    policy: &Policy,
    ema: &ParamMap,
    world: &World,
    x: PromptId,
    z: &PrivilegedContext,
    y: &Trajectory,
) -> Result<DistillLoss> {
    world.check_path(x, &y.answer_path)?;
    distill_loss(policy, ema, x, z, &y.answer_path)
}

/// Target-replaced objective on `(z_tilde, y_tilde)`.
pub fn caopd_loss_and_grad(
    policy: &Policy,
    ema: &ParamMap,
    world: &World,
    x: PromptId,
    z_tilde: &PrivilegedContext,
    y_tilde: &Trajectory,
) -> Result<DistillLoss> {
    world.check_path(x, &y_tilde.answer_path)?;
    distill_loss(policy, ema, x, z_tilde, &y_tilde.answer_path)
}
