use std::path::Path;

use caopd_core::infotheory::{check_report, proposition_report, Expectation, IDENTITY_TOL};
use caopd_core::world::build_world;
use caopd_core::{Policy, PropositionReport, TrajectoryScope, WorldSpec};
use serde::Serialize;

use crate::manifest::load_world;
use crate::output::{json, resolve_out, OutputDir};
use crate::{Check, CliError, Common, Outcome};

pub const PERTURBATIONS: usize = 100;

/// Worlds whose teacher cannot move the answer distribution must show no gap at all.
pub fn expectation_for(spec: &WorldSpec) -> Expectation {
    if spec.context_helpfulness == 0.0 {
        Expectation::Null
    } else {
        Expectation::Informative
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    world: &'a str,
    trials: usize,
    expectation: Expectation,
    tolerance: f64,
    failed_trials: Vec<usize>,
    violations: Vec<String>,
}

const TRIALS_HEADER: &str = "trial,seed,mi_r_z_given_x,entropy_r_given_x,mi_a_z_given_x,entropy_a_given_x,expected_teacher_entropy,entropy_gap,chain_rule_residual,projection_error,projection_argmin_is_mu,max_identity_residual,optimism_gap,optimism_gap_unfiltered,violations";

fn trial_row(trial: usize, seed: u64, r: &PropositionReport, violations: usize) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        trial,
        seed,
        r.mi_r_z_given_x,
        r.entropy_r_given_x,
        r.mi_a_z_given_x,
        r.entropy_a_given_x,
        r.expected_teacher_entropy,
        r.entropy_a_given_x - r.expected_teacher_entropy,
        r.chain_rule_residual,
        r.projection.error,
        r.projection.argmin_is_mu as u8,
        r.projection.max_identity_residual,
        r.optimism_gap,
        r.optimism_gap_unfiltered,
        violations
    )
}

/// Builds `trials` worlds from `world_path` with seeds `seed, seed + 1, ...`
/// and checks every proposition on each.
pub fn verify_propositions(world_path: &Path, trials: usize, common: &Common) -> Result<Outcome, CliError> {
    if trials == 0 {
        return Err(CliError::Input("--trials must be at least 1".into()));
    }
    let spec = load_world(world_path)?;
    let base_seed = common.seed.unwrap_or(spec.value.seed);
    let expect = expectation_for(&spec.value);
    let out = OutputDir::create(&resolve_out(common.out.as_deref(), None, "verify-propositions"))?;
    let name = world_path.file_name().unwrap_or_default().to_string_lossy().into_owned();
    out.write_provenance(&format!("world = {name:?}\ntrials = {trials}\nseed = {base_seed}\n"), &[(name.clone(), spec.text.clone())])?;

    let mut csv = format!("{TRIALS_HEADER}\n");
    let mut checks = Vec::new();
    let mut failed_trials = Vec::new();
    let mut all_violations = Vec::new();
    for t in 0..trials {
        let mut s = spec.value.clone();
        s.seed = base_seed.wrapping_add(t as u64);
        let world = build_world(&s)?;
        let policy = Policy::from_world(&world)?;
        let report = proposition_report(&policy, &world, TrajectoryScope::AnswerOnly, PERTURBATIONS, s.seed)?;
        let violations = check_report(&report, expect, IDENTITY_TOL);
        csv.push_str(&trial_row(t, s.seed, &report, violations.len()));
        out.write(format!("trial_{t:03}/report.json"), json(&report)?)?;
        out.write(format!("trial_{t:03}/prompts.csv"), report.per_prompt_csv())?;
        if !violations.is_empty() {
            failed_trials.push(t);
        }
        checks.push(Check::new(format!("trial {t} (seed {})", s.seed), violations.is_empty(), violations.join("; ")));
        all_violations.extend(violations.into_iter().map(|v| format!("trial {t}: {v}")));
    }
    out.write("trials.csv", &csv)?;
    let summary = Summary {
        world: &name,
        trials,
        expectation: expect,
        tolerance: IDENTITY_TOL,
        failed_trials: failed_trials.clone(),
        violations: all_violations,
    };
    out.write("summary.json", json(&summary)?)?;
    let out_dir = out.commit()?;
    Ok(Outcome {
        out_dir,
        summary: vec![format!(
            "verify-propositions: {} of {trials} trials consistent with a {:?} world",
            trials - failed_trials.len(),
            expect
        )],
        checks,
        enforce: true,
    })
}

/// Runs the checker alone on a stored report (used as a negative control).
pub fn check_report_file(path: &Path, expect: Expectation) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let report: PropositionReport =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let violations = check_report(&report, expect, IDENTITY_TOL);
    let checks = if violations.is_empty() {
        vec![Check::new("report", true, "")]
    } else {
        violations.iter().map(|v| Check::new("report", false, v.clone())).collect()
    };
    Ok(Outcome {
        out_dir: path.to_path_buf(),
        summary: vec![format!("check-report: {} violation(s)", violations.len())],
        checks,
        enforce: true,
    })
}
