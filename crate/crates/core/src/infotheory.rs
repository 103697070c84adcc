//! Exact information-theoretic quantities over an enumerated world.
//!
//! The joint over `(X, Z, A)` is `P(x) P(z | x) π(a | x, z)`, with `P(z | x)`
//! the world's context distribution (an empty context means the plain student
//! conditioning). All marginals are taken from this joint, so in particular
//! `P(a | x) = Σ_z P(z | x) π(a | x, z)` and the chain rule
//! `H(A | X) = H(A | X, Z) + I(A; Z | X)` holds exactly.
//!
//! The optimism gap compares the teacher's success probability against the
//! student's own deployment success `μ(x)` (no context). Entropies are in nats.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::entropy;
use crate::policy::Policy;
use crate::rng::{self, TAG_PERTURB};
use crate::world::{PromptId, World};

/// Which part of the trajectory the entropy/MI of "A" ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryScope {
    /// Answer segment only; confidence marginalized.
    #[default]
    AnswerOnly,
    /// Answer segment and confidence token.
    FullSequence,
}

struct ContextAnalysis {
    prob: f64,
    mu_t: f64,
    dist: Vec<f64>,
}

struct PromptAnalysis {
    prompt: PromptId,
    weight: f64,
    mu: f64,
    contexts: Vec<ContextAnalysis>,
}

impl PromptAnalysis {
    fn marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.contexts[0].dist.len()];
        for c in &self.contexts {
            for (mi, p) in m.iter_mut().zip(&c.dist) {
                *mi += c.prob * p;
            }
        }
        m
    }

    /// E_Z[μ_T | x], the X-measurable projection of the teacher success.
    fn mean_mu_t(&self) -> f64 {
        self.contexts.iter().map(|c| c.prob * c.mu_t).sum()
    }

    fn var_mu_t(&self) -> f64 {
        let m = self.mean_mu_t();
        self.contexts.iter().map(|c| c.prob * (c.mu_t - m).powi(2)).sum()
    }

    /// Contexts kept by the helpful filter `μ_T(x, z) >= μ(x)`, renormalized.
    fn helpful_mean_mu_t(&self) -> Option<f64> {
        let kept: Vec<&ContextAnalysis> = self.contexts.iter().filter(|c| c.mu_t >= self.mu).collect();
        let mass: f64 = kept.iter().map(|c| c.prob).sum();
        (mass > 0.0).then(|| kept.iter().map(|c| c.prob * c.mu_t).sum::<f64>() / mass)
    }
}

fn outcome_distribution(
    policy: &Policy,
    x: PromptId,
    context: Option<&crate::world::PrivilegedContext>,
    scope: TrajectoryScope,
) -> Result<Vec<f64>> {
    Ok(match scope {
        TrajectoryScope::AnswerOnly => policy.answer_distribution(x, context)?.into_iter().map(|(_, p)| p).collect(),
        TrajectoryScope::FullSequence => policy.enumerate_trajectories(x, context)?.into_iter().map(|(_, p)| p).collect(),
    })
}

fn analyze(policy: &Policy, world: &World, scope: TrajectoryScope) -> Result<Vec<PromptAnalysis>> {
    world
        .prompts()
        .par_iter()
        .zip(world.weights())
        .map(|(&x, &weight)| {
            let mu = policy.exact_success_prob(world, x, None)?;
            let contexts = world
                .contexts(x)?
                .iter()
                .map(|wc| {
                    let ctx = Some(&wc.context);
                    Ok(ContextAnalysis {
                        prob: wc.prob,
                        mu_t: policy.exact_success_prob(world, x, ctx)?,
                        dist: outcome_distribution(policy, x, ctx, scope)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PromptAnalysis { prompt: x, weight, mu, contexts })
        })
        .collect()
}

fn kl_terms(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / qi).ln())
        .sum()
}

fn binary(p: f64) -> [f64; 2] {
    [1.0 - p, p]
}

fn entropy_given_x(analysis: &[PromptAnalysis]) -> f64 {
    analysis.iter().map(|a| a.weight * entropy(&a.marginal())).sum()
}

fn teacher_entropy(analysis: &[PromptAnalysis]) -> f64 {
    analysis
        .iter()
        .map(|a| a.weight * a.contexts.iter().map(|c| c.prob * entropy(&c.dist)).sum::<f64>())
        .sum()
}

fn mi_outcome(analysis: &[PromptAnalysis]) -> f64 {
    analysis
        .iter()
        .map(|a| {
            let m = a.marginal();
            a.weight * a.contexts.iter().map(|c| c.prob * kl_terms(&c.dist, &m)).sum::<f64>()
        })
        .sum()
}

fn mi_correctness(analysis: &[PromptAnalysis]) -> f64 {
    analysis
        .iter()
        .map(|a| {
            let m = binary(a.mean_mu_t());
            a.weight * a.contexts.iter().map(|c| c.prob * kl_terms(&binary(c.mu_t), &m)).sum::<f64>()
        })
        .sum()
}

/// H(A | X) under the joint's marginal `P(a | x)`.
pub fn conditional_entropy_answers(policy: &Policy, world: &World) -> Result<f64> {
    conditional_entropy(policy, world, TrajectoryScope::AnswerOnly)
}

pub fn conditional_entropy(policy: &Policy, world: &World, scope: TrajectoryScope) -> Result<f64> {
    Ok(entropy_given_x(&analyze(policy, world, scope)?))
}

/// E_{X,Z}[H(π(A | X, Z))].
pub fn expected_teacher_entropy(policy: &Policy, world: &World) -> Result<f64> {
    expected_teacher_entropy_scoped(policy, world, TrajectoryScope::AnswerOnly)
}

pub fn expected_teacher_entropy_scoped(policy: &Policy, world: &World, scope: TrajectoryScope) -> Result<f64> {
    Ok(teacher_entropy(&analyze(policy, world, scope)?))
}

/// I(A; Z | X), summed directly from the joint (not via the chain rule).
pub fn mutual_info_answers(policy: &Policy, world: &World) -> Result<f64> {
    mutual_info_scoped(policy, world, TrajectoryScope::AnswerOnly)
}

pub fn mutual_info_scoped(policy: &Policy, world: &World, scope: TrajectoryScope) -> Result<f64> {
    Ok(mi_outcome(&analyze(policy, world, scope)?))
}

/// I(R; Z | X) with `P(R = 1 | x, z) = μ_T(x, z)`.
pub fn mutual_info_correctness(policy: &Policy, world: &World) -> Result<f64> {
    Ok(mi_correctness(&analyze(policy, world, TrajectoryScope::AnswerOnly)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCheck {
    /// E_X[Var(μ_T | X)].
    pub error: f64,
    /// No perturbed predictor beat the projection and every MSE gap matched
    /// `E[(g - E_Z[μ_T | X])^2]` within tolerance.
    pub argmin_is_mu: bool,
    pub perturbations: usize,
    pub max_identity_residual: f64,
}

fn projection_check(analysis: &[PromptAnalysis], perturbations: usize, seed: u64, tol: f64) -> ProjectionCheck {
    let mse = |g: &dyn Fn(usize) -> f64| -> f64 {
        analysis
            .iter()
            .enumerate()
            .map(|(i, a)| a.weight * a.contexts.iter().map(|c| c.prob * (c.mu_t - g(i)).powi(2)).sum::<f64>())
            .sum()
    };
    let proj: Vec<f64> = analysis.iter().map(|a| a.mean_mu_t()).collect();
    let error: f64 = analysis.iter().map(|a| a.weight * a.var_mu_t()).sum();
    let base = mse(&|i| proj[i]);

    let mut rng = rng::stream(seed, &[TAG_PERTURB]);
    let mut ok = true;
    let mut max_residual: f64 = 0.0;
    for _ in 0..perturbations {
        let g: Vec<f64> = proj.iter().map(|m| m + rng.random_range(-0.5..0.5)).collect();
        let gap = mse(&|i| g[i]) - base;
        let expected: f64 = analysis
            .iter()
            .zip(g.iter().zip(&proj))
            .map(|(a, (gi, mi))| a.weight * (gi - mi).powi(2))
            .sum();
        let residual = (gap - expected).abs();
        max_residual = max_residual.max(residual);
        if gap < -tol || residual > tol {
            ok = false;
        }
    }
    ProjectionCheck {
        error,
        argmin_is_mu: ok,
        perturbations,
        max_identity_residual: max_residual,
    }
}

/// Irreducible projection error and the check that the X-measurable
/// projection is undominated by `perturbations` random predictors.
pub fn projection_error(policy: &Policy, world: &World, perturbations: usize, seed: u64) -> Result<ProjectionCheck> {
    let analysis = analyze(policy, world, TrajectoryScope::AnswerOnly)?;
    Ok(projection_check(&analysis, perturbations, seed, IDENTITY_TOL))
}

fn optimism(analysis: &[PromptAnalysis], helpful_only: bool) -> Result<f64> {
    let mut mass = 0.0;
    let mut total = 0.0;
    for a in analysis {
        let target = if helpful_only { a.helpful_mean_mu_t() } else { Some(a.mean_mu_t()) };
        if let Some(t) = target {
            mass += a.weight;
            total += a.weight * (t - a.mu);
        }
    }
    if mass == 0.0 {
        return Err(Error::EmptyHelpfulSet);
    }
    Ok(total / mass)
}

/// E_{X, Z}[μ_T(X, Z) - μ(X)], optionally restricted to helpful contexts.
pub fn optimism_gap(policy: &Policy, world: &World, helpful_only: bool) -> Result<f64> {
    optimism(&analyze(policy, world, TrajectoryScope::AnswerOnly)?, helpful_only)
}

/// Tolerance for the exact identities (finite sums of f64 products).
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub prompt: PromptId,
    pub weight: f64,
    /// Student deployment success μ(x).
    pub mu: f64,
    /// E_Z[μ_T | X = x].
    pub mean_mu_t: f64,
    /// Var(μ_T | X = x).
    pub var_mu_t: f64,
    /// Mean teacher success over helpful contexts only, if any survive.
    pub helpful_mean_mu_t: Option<f64>,
    /// Member of the strict-improvement set of the helpful filter.
    pub strict_improvement: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub scope: TrajectoryScope,
    pub mi_r_z_given_x: f64,
    pub entropy_r_given_x: f64,
    pub mi_a_z_given_x: f64,
    pub entropy_a_given_x: f64,
    pub expected_teacher_entropy: f64,
    pub chain_rule_residual: f64,
    pub projection: ProjectionCheck,
    /// Helpful-filtered optimism gap.
    pub optimism_gap: f64,
    pub optimism_gap_unfiltered: f64,
    pub per_prompt: Vec<PromptStats>,
}

pub fn proposition_report(
    policy: &Policy,
    world: &World,
    scope: TrajectoryScope,
    perturbations: usize,
    seed: u64,
) -> Result<PropositionReport> {
    let analysis = analyze(policy, world, scope)?;
    // correctness quantities and the gaps never depend on the scope
    let entropy_a = entropy_given_x(&analysis);
    let teacher = teacher_entropy(&analysis);
    let mi_a = mi_outcome(&analysis);
    let per_prompt = analysis
        .iter()
        .map(|a| {
            let helpful = a.helpful_mean_mu_t();
            PromptStats {
                prompt: a.prompt,
                weight: a.weight,
                mu: a.mu,
                mean_mu_t: a.mean_mu_t(),
                var_mu_t: a.var_mu_t(),
                helpful_mean_mu_t: helpful,
                strict_improvement: helpful.is_some_and(|h| h > a.mu),
            }
        })
        .collect();
    Ok(PropositionReport {
        scope,
        mi_r_z_given_x: mi_correctness(&analysis),
        entropy_r_given_x: analysis.iter().map(|a| a.weight * entropy(&binary(a.mean_mu_t()))).sum(),
        mi_a_z_given_x: mi_a,
        entropy_a_given_x: entropy_a,
        expected_teacher_entropy: teacher,
        chain_rule_residual: (entropy_a - teacher - mi_a).abs(),
        projection: projection_check(&analysis, perturbations, seed, IDENTITY_TOL),
        optimism_gap: optimism(&analysis, true)?,
        optimism_gap_unfiltered: optimism(&analysis, false)?,
        per_prompt,
    })
}

impl PropositionReport {
    pub const CSV_HEADER: &'static str =
        "prompt,weight,mu,mean_mu_t,var_mu_t,helpful_mean_mu_t,strict_improvement";

    pub fn per_prompt_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.per_prompt {
            let helpful = s.helpful_mean_mu_t.map(|h| h.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.prompt, s.weight, s.mu, s.mean_mu_t, s.var_mu_t, helpful, s.strict_improvement as u8
            ));
        }
        out
    }
}

/// What a world is expected to exhibit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    /// Helpful contexts with a positive in-context bias: every gap strictly positive.
    Informative,
    /// Teacher equals student: every gap vanishes.
    Null,
}

/// Violated checks, empty when the report is consistent with `expect`.
pub fn check_report(report: &PropositionReport, expect: Expectation, tol: f64) -> Vec<String> {
    let mut v = Vec::new();
    let mut require = |ok: bool, msg: String| {
        if !ok {
            v.push(msg);
        }
    };
    for (name, value) in [
        ("I(R;Z|X)", report.mi_r_z_given_x),
        ("I(A;Z|X)", report.mi_a_z_given_x),
        ("H(A|X)", report.entropy_a_given_x),
        ("E[H(teacher)]", report.expected_teacher_entropy),
        ("projection error", report.projection.error),
    ] {
        require(value >= -1e-12, format!("{name} = {value:e} is negative"));
    }
    let chain = (report.entropy_a_given_x - report.expected_teacher_entropy - report.mi_a_z_given_x).abs();
    require(chain <= tol, format!("chain rule residual {chain:e} exceeds {tol:e}"));
    require(
        report.mi_r_z_given_x <= report.entropy_r_given_x + tol && report.entropy_r_given_x <= 2f64.ln() + tol,
        "I(R;Z|X) exceeds H(R|X) or H(R|X) exceeds log 2".into(),
    );
    require(
        report.projection.argmin_is_mu,
        format!(
            "a perturbed predictor beat the projection (max identity residual {:e})",
            report.projection.max_identity_residual
        ),
    );
    require(report.optimism_gap >= -tol, format!("helpful optimism gap {:e} is negative", report.optimism_gap));
    match expect {
        Expectation::Informative => {
            require(report.mi_r_z_given_x > 0.0, "I(R;Z|X) is not positive".into());
            require(report.projection.error > 0.0, "projection error is not positive".into());
            require(report.mi_a_z_given_x > 0.0, "I(A;Z|X) is not positive".into());
            require(
                report.expected_teacher_entropy < report.entropy_a_given_x,
                "teacher entropy is not strictly below H(A|X)".into(),
            );
            require(
                report.per_prompt.iter().any(|s| s.strict_improvement && s.weight > 0.0),
                "helpful filter has no strict-improvement prompt".into(),
            );
            require(report.optimism_gap > 0.0, "optimism gap is not positive".into());
        }
        Expectation::Null => {
            for (name, value) in [
                ("I(R;Z|X)", report.mi_r_z_given_x),
                ("I(A;Z|X)", report.mi_a_z_given_x),
                ("projection error", report.projection.error),
                ("optimism gap", report.optimism_gap.abs()),
                ("entropy gap", (report.entropy_a_given_x - report.expected_teacher_entropy).abs()),
            ] {
                require(value <= tol, format!("{name} = {value:e} should vanish in a null world"));
            }
        }
    }
    v
}

/// Exact μ(x) for every prompt, in world order.
pub fn success_profile(policy: &Policy, world: &World) -> Result<Vec<f64>> {
    world
        .prompts()
        .iter()
        .map(|&x| policy.exact_success_prob(world, x, None))
        .collect()
}
