use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{exact_accuracy, exact_mean_confidence};
use super::loss::{caopd_loss_and_grad, opd_loss_and_grad, LossBreakdown};
use super::rlcr::{rlcr_lite_gradient, RLCR_LABEL};
use super::target::{replace_target, revise_context, ta_self_consistency, target_from_rollouts, ConfidenceTarget};
use crate::error::{Error, Result};
use crate::policy::{ema_update, ParamMap, Policy, Trajectory};
use crate::rng::{self, TAG_BATCH, TAG_DISTILL, TAG_REFERENCE, TAG_ROLLOUT};
use crate::world::{build_sdft_context, build_sdpo_context, PromptId, World};

/// Any parameter beyond this magnitude aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Opd,
    Caopd,
    RlcrLite,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::Opd => "opd",
            Regime::Caopd => "caopd",
            Regime::RlcrLite => RLCR_LABEL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextBuilder {
    #[default]
    Sdft,
    Sdpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSource {
    #[default]
    Verifier,
    TeacherAnchoredSc,
}

fn default_k() -> usize {
    8
}
fn default_alpha() -> f64 {
    0.05
}
fn default_temperature() -> f64 {
    1.0
}
fn default_lambda() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub regime: Regime,
    #[serde(default)]
    pub context_builder: ContextBuilder,
    #[serde(default)]
    pub target_source: TargetSource,
    #[serde(default = "default_k")]
    pub k_rollouts: usize,
    pub learning_rate: f64,
    #[serde(default = "default_alpha")]
    pub ema_alpha: f64,
    pub steps: usize,
    /// 0 trains on every prompt each step.
    #[serde(default)]
    pub batch_prompts: usize,
    #[serde(default = "default_temperature")]
    pub rollout_temperature: f64,
    #[serde(default = "default_lambda")]
    pub brier_lambda: f64,
    #[serde(default)]
    pub momentum: f64,
    pub seed: u64,
    /// 0 disables checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(regime: Regime, learning_rate: f64, steps: usize, seed: u64) -> Self {
        Self {
            regime,
            context_builder: ContextBuilder::Sdft,
            target_source: TargetSource::Verifier,
            k_rollouts: default_k(),
            learning_rate,
            ema_alpha: default_alpha(),
            steps,
            batch_prompts: 0,
            rollout_temperature: default_temperature(),
            brier_lambda: default_lambda(),
            momentum: 0.0,
            seed,
            checkpoint_every: 0,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.k_rollouts == 0 {
            return bad("k_rollouts must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return bad(format!("ema_alpha {} must lie in (0, 1]", self.ema_alpha));
        }
        if !(self.rollout_temperature > 0.0 && self.rollout_temperature.is_finite()) {
            return bad(format!("rollout_temperature {} must be positive", self.rollout_temperature));
        }
        if !(self.brier_lambda >= 0.0 && self.brier_lambda.is_finite()) {
            return bad(format!("brier_lambda {} must be non-negative", self.brier_lambda));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub regime: String,
    /// Mean per-prompt objective (negated mean reward for the policy-gradient baseline).
    pub loss: f64,
    pub breakdown: LossBreakdown,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub ocg: f64,
    pub prompts_used: usize,
    pub prompts_skipped: usize,
    pub mean_raw_target: Option<f64>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
    /// Distinct raw targets seen, as `(successes, k_used)`.
    pub target_support: BTreeSet<(usize, usize)>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "step,regime,loss,capability_term,calibration_term,total,accuracy,mean_confidence,ocg,prompts_used,prompts_skipped,mean_raw_target";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.regime,
                r.loss,
                r.breakdown.capability_term,
                r.breakdown.calibration_term,
                r.breakdown.total,
                r.accuracy,
                r.mean_confidence,
                r.ocg,
                r.prompts_used,
                r.prompts_skipped,
                r.mean_raw_target.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Distinct raw target values in increasing order.
    pub fn raw_target_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.target_support.iter().map(|&(s, k)| s as f64 / k as f64).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }
}

struct PromptOutcome {
    gradient: Option<ParamMap>,
    loss: f64,
    breakdown: LossBreakdown,
    target: Option<ConfidenceTarget>,
}

/// Stateful optimizer: live parameters live in the `Policy`, the EMA shadow
/// and momentum buffer live here.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    ema: ParamMap,
    velocity: Option<ParamMap>,
    step: usize,
    log: TrainingLog,
}

impl Trainer {
    pub fn new(config: TrainConfig, policy: &Policy) -> Result<Self> {
        config.validate()?;
        let velocity = (config.momentum > 0.0).then(|| policy.params().zeros_like());
        Ok(Self {
            config,
            ema: policy.params().clone(),
            velocity,
            step: 0,
            log: TrainingLog::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn ema(&self) -> &ParamMap {
        &self.ema
    }

    pub fn log(&self) -> &TrainingLog {
        &self.log
    }

    pub fn into_log(self) -> TrainingLog {
        self.log
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    fn batch(&self, world: &World) -> Vec<PromptId> {
        let prompts = world.prompts();
        let b = self.config.batch_prompts;
        if b == 0 || b >= prompts.len() {
            return prompts.to_vec();
        }
        let mut r = rng::stream(self.config.seed, &[TAG_BATCH, self.step as u64]);
        let mut idx = sample(&mut r, prompts.len(), b).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| prompts[i]).collect()
    }

    fn rollouts(&self, policy: &Policy, x: PromptId) -> Result<Vec<Trajectory>> {
        (0..self.config.k_rollouts)
            .map(|k| {
                let mut r = rng::stream(self.config.seed, &[TAG_ROLLOUT, self.step as u64, x.0 as u64, k as u64]);
                policy.sample_trajectory_tempered(x, None, self.config.rollout_temperature, &mut r)
            })
            .collect()
    }

    fn prompt_outcome(&self, policy: &Policy, world: &World, x: PromptId) -> Result<PromptOutcome> {
        let c = &self.config;
        let seed = c.seed;
        let step = self.step as u64;
        let needs_rollouts = c.regime == Regime::RlcrLite
            || c.context_builder == ContextBuilder::Sdpo
            || (c.regime == Regime::Caopd && c.target_source == TargetSource::Verifier);
        let rollouts = if needs_rollouts { self.rollouts(policy, x)? } else { Vec::new() };

        if c.regime == Regime::RlcrLite {
            let (g, reward) = rlcr_lite_gradient(policy, world, x, &rollouts, c.brier_lambda, c.rollout_temperature)?;
            return Ok(PromptOutcome {
                gradient: Some(g),
                loss: -reward,
                breakdown: LossBreakdown::default(),
                target: None,
            });
        }

        let z = match c.context_builder {
            ContextBuilder::Sdft => Some(build_sdft_context(world, x)?),
            ContextBuilder::Sdpo => build_sdpo_context(world, x, &rollouts)?,
        };
        let Some(z) = z else {
            return Ok(PromptOutcome {
                gradient: None,
                loss: 0.0,
                breakdown: LossBreakdown::default(),
                target: None,
            });
        };
        let mut r = rng::stream(seed, &[TAG_DISTILL, step, x.0 as u64]);
        let y = policy.sample_trajectory(x, None, &mut r)?;
        let (loss, target) = match c.regime {
            Regime::Opd => (opd_loss_and_grad(policy, &self.ema, world, x, &z, &y)?, None),
            _ => {
                let target = match c.target_source {
                    TargetSource::Verifier => target_from_rollouts(world, x, &rollouts)?,
                    TargetSource::TeacherAnchoredSc => {
                        let mut r = rng::stream(seed, &[TAG_REFERENCE, step, x.0 as u64]);
                        ta_self_consistency(policy, x, &z, c.k_rollouts, &mut r)?
                    }
                };
                let grid = policy.grid();
                let yt = replace_target(&y, &target, &grid);
                let zt = revise_context(&z, &target)?;
                (caopd_loss_and_grad(policy, &self.ema, world, x, &zt, &yt)?, Some(target))
            }
        };
        Ok(PromptOutcome {
            gradient: Some(loss.gradient),
            loss: loss.breakdown.total,
            breakdown: loss.breakdown,
            target,
        })
    }

    /// One optimizer step on `world`; the world may change between calls.
    pub fn step(&mut self, policy: &mut Policy, world: &World) -> Result<StepRecord> {
        let started = Instant::now();
        let batch = self.batch(world);
        let snapshot: &Policy = policy;
        let outcomes = batch
            .par_iter()
            .map(|&x| self.prompt_outcome(snapshot, world, x))
            .collect::<Result<Vec<_>>>()?;

        let mut grad = policy.params().zeros_like();
        let mut breakdown = LossBreakdown::default();
        let mut loss = 0.0;
        let mut used = 0usize;
        let mut targets = Vec::new();
        for o in &outcomes {
            if let Some(g) = &o.gradient {
                grad.add_scaled(g, 1.0);
                breakdown.add(&o.breakdown);
                loss += o.loss;
                used += 1;
            }
            if let Some(t) = o.target {
                targets.push(t);
            }
        }
        if used > 0 {
            let inv = 1.0 / used as f64;
            grad.scale(inv);
            breakdown = breakdown.scaled(inv);
            loss *= inv;
            let lr = self.config.learning_rate;
            let direction = match &mut self.velocity {
                Some(v) => {
                    v.scale(self.config.momentum);
                    v.add_scaled(&grad, 1.0);
                    v.clone()
                }
                None => grad,
            };
            policy.params_mut().add_scaled(&direction, -lr);
            let params = policy.params();
            if !params.is_finite() {
                return Err(Error::NonFinite("parameters after update"));
            }
            let magnitude = params.max_abs();
            if magnitude > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    step: self.step,
                    magnitude,
                    limit: DIVERGENCE_LIMIT,
                });
            }
        }
        ema_update(&mut self.ema, policy.params(), self.config.ema_alpha)?;

        for t in &targets {
            self.log.target_support.insert((t.successes, t.k_used));
        }
        let accuracy = exact_accuracy(policy, world)?;
        let mean_confidence = exact_mean_confidence(policy, world)?;
        let record = StepRecord {
            step: self.step,
            regime: self.config.regime.label().to_string(),
            loss,
            breakdown,
            accuracy,
            mean_confidence,
            ocg: mean_confidence - accuracy,
            prompts_used: used,
            prompts_skipped: batch.len() - used,
            mean_raw_target: (!targets.is_empty())
                .then(|| targets.iter().map(|t| t.raw_mu_hat).sum::<f64>() / targets.len() as f64),
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        self.step += 1;
        self.log.records.push(record.clone());
        Ok(record)
    }
}

/// Runs `config.steps` steps of `config.regime` on `world`, mutating `policy`.
pub fn train(config: &TrainConfig, world: &World, policy: &mut Policy) -> Result<TrainingLog> {
    let mut trainer = Trainer::new(config.clone(), policy)?;
    for _ in 0..config.steps {
        trainer.step(policy, world)?;
    }
    Ok(trainer.into_log())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_world, WorldSpec};

    fn world() -> World {
        let mut spec = WorldSpec::small(6, 4, 1, 3);
        spec.difficulty_profile = vec![0.8];
        spec.context_helpfulness = 0.5;
        spec.context_confidence_bias = 4.0;
        build_world(&spec).unwrap()
    }

    #[test]
    fn zero_steps_is_a_no_op() {
        let w = world();
        let mut p = Policy::from_world(&w).unwrap();
        let before = p.clone();
        let log = train(&TrainConfig::new(Regime::Opd, 0.5, 0, 1), &w, &mut p).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(Regime::Caopd, 0.5, 1, 1);
        c.k_rollouts = 0;
        assert!(c.validate().is_err());
        c = TrainConfig::new(Regime::Caopd, 0.0, 1, 1);
        assert!(c.validate().is_err());
        c = TrainConfig::new(Regime::Caopd, 0.1, 1, 1);
        c.ema_alpha = 0.0;
        assert!(c.validate().is_err());
        let parsed = TrainConfig::from_toml_str("regime = \"caopd\"\nlearning_rate = 0.5\nsteps = 3\nseed = 9\n").unwrap();
        assert_eq!(parsed.k_rollouts, 8);
        assert_eq!(parsed.ema_alpha, 0.05);
        assert!(TrainConfig::from_toml_str("regime = \"caopd\"\nlearning_rate = 0.5\nsteps = 3\nseed = 9\nbogus = 1\n").is_err());
        assert_eq!(TrainConfig::from_toml_str(&parsed.to_toml_string().unwrap()).unwrap(), parsed);
    }

    #[test]
    fn same_seed_same_log() {
        let w = world();
        for regime in [Regime::Opd, Regime::Caopd, Regime::RlcrLite] {
            let c = TrainConfig::new(regime, 0.5, 5, 4);
            let mut a = Policy::from_world(&w).unwrap();
            let mut b = Policy::from_world(&w).unwrap();
            let la = train(&c, &w, &mut a).unwrap();
            let lb = train(&c, &w, &mut b).unwrap();
            assert_eq!(la.to_csv(), lb.to_csv());
            assert_eq!(a, b);
            assert_eq!(la.records.len(), 5);
            assert!(la.records.windows(2).all(|p| p[1].step == p[0].step + 1));
        }
    }

    #[test]
    fn answer_rows_match_across_opd_and_caopd() {
        let w = world();
        let mut a = Policy::from_world(&w).unwrap();
        let mut b = Policy::from_world(&w).unwrap();
        let la = train(&TrainConfig::new(Regime::Opd, 0.5, 10, 8), &w, &mut a).unwrap();
        let lb = train(&TrainConfig::new(Regime::Caopd, 0.5, 10, 8), &w, &mut b).unwrap();
        for (ra, rb) in la.records.iter().zip(&lb.records) {
            assert_eq!(ra.accuracy, rb.accuracy);
            assert_eq!(ra.breakdown.capability_term, rb.breakdown.capability_term);
        }
    }

    #[test]
    fn sdpo_skips_prompts_without_a_verified_rollout() {
        let w = world();
        let mut p = Policy::from_world(&w).unwrap();
        let mut c = TrainConfig::new(Regime::Caopd, 0.5, 3, 5);
        c.context_builder = ContextBuilder::Sdpo;
        c.k_rollouts = 1;
        let log = train(&c, &w, &mut p).unwrap();
        assert!(log.records.iter().all(|r| r.prompts_used + r.prompts_skipped == 6));
        assert!(log.records.iter().any(|r| r.prompts_skipped > 0));
    }

    #[test]
    fn divergence_guard_trips() {
        let w = world();
        let mut p = Policy::from_world(&w).unwrap();
        p.set_context_biases(50.0, 50.0);
        let c = TrainConfig::new(Regime::Opd, 1e6, 5, 5);
        assert!(matches!(train(&c, &w, &mut p), Err(Error::Divergence { .. })));
    }
}
