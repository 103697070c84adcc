use crate::error::{Error, Result};
use crate::math::log_softmax;

/// Teacher probabilities are floored here before taking logs.
pub const TEACHER_PROB_FLOOR: f64 = 1e-12;

/// Reverse KL `KL(p || q)` with `p = softmax(student_logits)` and its gradient
/// with respect to the student logits, `p_i (log(p_i / q_i) - KL)`.
///
/// The teacher side is a constant: no gradient flows into `teacher_probs`.
pub fn reverse_kl_and_grad(student_logits: &[f64], teacher_probs: &[f64]) -> Result<(f64, Vec<f64>)> {
    if student_logits.len() != teacher_probs.len() {
        return Err(Error::Inconsistent(format!(
            "student has {} logits, teacher {} probabilities",
            student_logits.len(),
            teacher_probs.len()
        )));
    }
    if student_logits.iter().chain(teacher_probs).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reverse_kl_and_grad"));
    }
    let log_p = log_softmax(student_logits);
    let log_ratio: Vec<f64> = log_p
        .iter()
        .zip(teacher_probs)
        .map(|(lp, q)| lp - q.max(TEACHER_PROB_FLOOR).ln())
        .collect();
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let kl: f64 = p.iter().zip(&log_ratio).map(|(p, r)| p * r).sum();
    let grad = p.iter().zip(&log_ratio).map(|(p, r)| p * (r - kl)).collect();
    Ok((kl, grad))
}
