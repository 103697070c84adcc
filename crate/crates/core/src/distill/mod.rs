//! Distillation engine: per-token reverse KL between the student and the
//! privileged teacher, empirical confidence targets, target replacement, a
//! Brier-penalized policy-gradient baseline and the training loop.

mod eval;
mod kl;
mod loss;
mod rlcr;
mod target;
mod train;

pub use eval::{exact_accuracy, exact_mean_confidence, exact_records, exact_report};
pub use kl::{reverse_kl_and_grad, TEACHER_PROB_FLOOR};
pub use loss::{caopd_loss_and_grad, distill_loss, opd_loss_and_grad, DistillLoss, LossBreakdown};
pub use rlcr::{brier_reward, exact_policy_gradient, rlcr_lite_gradient, rlcr_lite_step};
pub use target::{
    monte_carlo_confidence, replace_target, revise_context, ta_self_consistency, target_from_agreement,
    target_from_rollouts, ConfidenceTarget,
};
pub use train::{
    train, ContextBuilder, Regime, StepRecord, TargetSource, TrainConfig, Trainer, TrainingLog,
    DIVERGENCE_LIMIT,
};
