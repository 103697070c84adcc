use std::path::Path;

use caopd_core::distill::{exact_report, Trainer};
use caopd_core::world::build_world;
use caopd_core::{CalibrationReport, Policy, Regime, Thresholds, TrainConfig, TrainingLog, World, WorldSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::Manifest;
use crate::output::{json, opt, resolve_out, OutputDir};
use crate::{svg, Check, CliError, Common, Outcome};

pub struct RunResult {
    pub name: String,
    pub config: TrainConfig,
    pub log: TrainingLog,
    pub report: CalibrationReport,
    pub policy: Policy,
    /// `(step, checkpoint json)`.
    pub checkpoints: Vec<(usize, String)>,
}

/// Trains `policy` on `world` and evaluates the final policy exactly.
pub fn run_training(
    name: &str,
    config: &TrainConfig,
    world: &World,
    mut policy: Policy,
    bins: usize,
) -> Result<RunResult, CliError> {
    let mut trainer = Trainer::new(config.clone(), &policy)?;
    let mut checkpoints = Vec::new();
    for step in 1..=config.steps {
        trainer.step(&mut policy, world)?;
        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 {
            checkpoints.push((step, policy.to_checkpoint_json()?));
        }
    }
    let report = exact_report(&policy, world, bins)?;
    Ok(RunResult {
        name: name.to_string(),
        config: config.clone(),
        log: trainer.into_log(),
        report,
        policy,
        checkpoints,
    })
}

fn write_run(out: &OutputDir, dir: &str, r: &RunResult, emit_svg: bool) -> Result<(), CliError> {
    out.write(format!("{dir}/log.csv"), r.log.to_csv())?;
    out.write(format!("{dir}/log.json"), json(&r.log)?)?;
    out.write(format!("{dir}/report.json"), json(&r.report)?)?;
    out.write(format!("{dir}/report.csv"), r.report.to_csv())?;
    out.write(format!("{dir}/bins.csv"), r.report.bins_csv())?;
    out.write(format!("{dir}/policy.json"), r.policy.to_checkpoint_json()?)?;
    for (step, ck) in &r.checkpoints {
        out.write(format!("{dir}/checkpoints/step_{step:06}.json"), ck)?;
    }
    if emit_svg {
        out.write(format!("{dir}/reliability.svg"), svg::reliability(&r.report, &format!("{} reliability", r.name)))?;
        let series = |f: fn(&caopd_core::StepRecord) -> f64| r.log.records.iter().map(|s| (s.step as f64, f(s))).collect();
        out.write(
            format!("{dir}/curves.svg"),
            svg::lines(
                &[
                    ("accuracy".to_string(), series(|s| s.accuracy)),
                    ("mean confidence".to_string(), series(|s| s.mean_confidence)),
                ],
                &format!("{} trajectory", r.name),
                "step",
                "value",
            ),
        )?;
        out.write(
            format!("{dir}/loss.svg"),
            svg::lines(
                &[
                    ("capability".to_string(), series(|s| s.breakdown.capability_term)),
                    ("calibration".to_string(), series(|s| s.breakdown.calibration_term)),
                ],
                &format!("{} loss", r.name),
                "step",
                "KL (nats)",
            ),
        )?;
    }
    Ok(())
}

const SUMMARY_HEADER: &str = "name,regime,steps,k_rollouts,accuracy,mean_confidence,ocg,ece,brier,spr,auroc";

fn summary_row(r: &RunResult) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        r.name,
        r.config.regime.label(),
        r.config.steps,
        r.config.k_rollouts,
        r.report.accuracy,
        r.report.mean_confidence,
        r.report.ocg,
        r.report.ece,
        r.report.brier,
        opt(r.report.spr),
        opt(r.report.auroc)
    )
}

fn build(spec: &WorldSpec) -> Result<World, CliError> {
    Ok(build_world(spec)?)
}

fn map_runs<T: Send, F>(items: Vec<T>, parallel: bool, f: F) -> Result<Vec<RunResult>, CliError>
where
    F: Fn(T) -> Result<RunResult, CliError> + Sync + Send,
{
    if parallel {
        items.into_par_iter().map(f).collect()
    } else {
        items.into_iter().map(f).collect()
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    runs: Vec<RunSummary<'a>>,
    checks: &'a [Check],
}

#[derive(Serialize)]
struct RunSummary<'a> {
    name: &'a str,
    regime: &'a str,
    report: &'a CalibrationReport,
}

fn train_checks(runs: &[RunResult], t: &Thresholds) -> Vec<Check> {
    let mut checks = Vec::new();
    for r in runs {
        match r.config.regime {
            Regime::Opd => checks.push(Check::new(
                format!("{}: overconfident", r.name),
                r.report.ocg >= t.opd_min_ocg && r.report.mean_confidence >= t.opd_min_confidence,
                format!("ocg {} (min {}), confidence {} (min {})", r.report.ocg, t.opd_min_ocg, r.report.mean_confidence, t.opd_min_confidence),
            )),
            Regime::Caopd => checks.push(Check::new(
                format!("{}: calibrated", r.name),
                r.report.ocg.abs() <= t.ocg_band,
                format!("|ocg| {} (band {})", r.report.ocg.abs(), t.ocg_band),
            )),
            Regime::RlcrLite => {}
        }
    }
    let opd = runs.iter().find(|r| r.config.regime == Regime::Opd);
    let caopd = runs.iter().find(|r| r.config.regime == Regime::Caopd);
    if let (Some(a), Some(b)) = (opd, caopd) {
        let diff = (a.report.accuracy - b.report.accuracy).abs();
        checks.push(Check::new(
            "accuracy unchanged by target replacement",
            diff <= t.accuracy_band,
            format!("|{} - {}| = {diff} (band {})", a.report.accuracy, b.report.accuracy, t.accuracy_band),
        ));
    }
    checks
}

/// Every run in the manifest on the same world, each from a fresh policy.
pub fn train(manifest_path: &Path, common: &Common) -> Result<Outcome, CliError> {
    let m = Manifest::load(manifest_path)?;
    if m.runs.is_empty() {
        return Err(CliError::Input("manifest lists no train configs".into()));
    }
    let thresholds = common.thresholds(m.thresholds.as_ref().map(|t| &t.value))?;
    let world = build(&m.world.value)?;
    let init = Policy::from_world(&world)?;
    let runs = map_runs(m.configs(common.seed), common.parallel, |(name, c)| {
        run_training(&name, &c, &world, init.clone(), common.bins)
    })?;

    let out = OutputDir::create(&resolve_out(common.out.as_deref(), m.out.as_deref(), "train"))?;
    out.write_provenance(&m.text, &m.inputs())?;
    let emit_svg = common.svg || m.emit_svg;
    let mut csv = format!("{SUMMARY_HEADER}\n");
    for r in &runs {
        write_run(&out, &r.name, r, emit_svg)?;
        csv.push_str(&summary_row(r));
    }
    out.write("summary.csv", &csv)?;
    let checks = train_checks(&runs, &thresholds);
    let summary = Summary {
        runs: runs
            .iter()
            .map(|r| RunSummary { name: &r.name, regime: r.config.regime.label(), report: &r.report })
            .collect(),
        checks: &checks,
    };
    out.write("summary.json", json(&summary)?)?;
    let lines = runs
        .iter()
        .map(|r| {
            format!(
                "{}: accuracy {:.4} confidence {:.4} ocg {:+.4} ece {:.4}",
                r.name, r.report.accuracy, r.report.mean_confidence, r.report.ocg, r.report.ece
            )
        })
        .collect();
    Ok(Outcome { out_dir: out.commit()?, summary: lines, checks, enforce: common.strict })
}

const ABLATE_HEADER: &str = "k,accuracy,mean_confidence,ocg,ece,spr,auroc,target_granularity,distinct_targets,targets";

fn ablate_checks(rows: &[(usize, &RunResult)], t: &Thresholds) -> Vec<Check> {
    let mut checks = Vec::new();
    let find = |k: usize| rows.iter().find(|(kk, _)| *kk == k).map(|(_, r)| *r);
    if let Some(r) = find(1) {
        let v = r.log.raw_target_values();
        checks.push(Check::new("K=1 targets are binary", v.iter().all(|&x| x == 0.0 || x == 1.0), format!("{v:?}")));
    }
    if let Some(r) = find(8) {
        let v = r.log.raw_target_values();
        checks.push(Check::new(
            "K=8 targets on multiples of 1/8",
            v.iter().all(|&x| (x * 8.0).fract() == 0.0),
            format!("{v:?}"),
        ));
    }
    if let (Some(a), Some(b)) = (find(1), find(8)) {
        checks.push(Check::new(
            "|OCG| at K=8 below K=1",
            b.report.ocg.abs() < a.report.ocg.abs(),
            format!("{} vs {}", b.report.ocg, a.report.ocg),
        ));
    }
    let accs: Vec<f64> = rows.iter().map(|(_, r)| r.report.accuracy).collect();
    let spread = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - accs.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check::new("accuracy flat across K", spread <= t.accuracy_band, format!("spread {spread} (band {})", t.accuracy_band)));
    checks
}

/// One target-replacement run per K, all other settings from the manifest's
/// first target-replacement config (or its first config).
pub fn ablate_k(manifest_path: &Path, k_list: &[usize], common: &Common) -> Result<Outcome, CliError> {
    let m = Manifest::load(manifest_path)?;
    let configs = m.configs(common.seed);
    let (_, base) = configs
        .iter()
        .find(|(_, c)| c.regime == Regime::Caopd)
        .or(configs.first())
        .cloned()
        .ok_or_else(|| CliError::Input("manifest lists no train configs".into()))?;
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(CliError::Input("--k-list needs positive entries".into()));
    }
    let thresholds = common.thresholds(m.thresholds.as_ref().map(|t| &t.value))?;
    let world = build(&m.world.value)?;
    let init = Policy::from_world(&world)?;
    let items: Vec<(usize, TrainConfig)> = k_list
        .iter()
        .map(|&k| {
            let mut c = base.clone();
            c.regime = Regime::Caopd;
            c.k_rollouts = k;
            (k, c)
        })
        .collect();
    let runs = map_runs(items, common.parallel, |(k, c)| run_training(&format!("k_{k}"), &c, &world, init.clone(), common.bins))?;

    let out = OutputDir::create(&resolve_out(common.out.as_deref(), m.out.as_deref(), "ablate-k"))?;
    out.write_provenance(&m.text, &m.inputs())?;
    let emit_svg = common.svg || m.emit_svg;
    let mut csv = format!("{ABLATE_HEADER}\n");
    let rows: Vec<(usize, &RunResult)> = k_list.iter().copied().zip(runs.iter()).collect();
    for (k, r) in &rows {
        write_run(&out, &r.name, r, emit_svg)?;
        let targets = r.log.raw_target_values();
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            k,
            r.report.accuracy,
            r.report.mean_confidence,
            r.report.ocg,
            r.report.ece,
            opt(r.report.spr),
            opt(r.report.auroc),
            1.0 / *k as f64,
            targets.len(),
            targets.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
        ));
    }
    out.write("ablate_k.csv", &csv)?;
    if emit_svg {
        let pts = |f: fn(&RunResult) -> f64| rows.iter().map(|(k, r)| ((*k as f64).log2(), f(r))).collect();
        out.write(
            "ablate_k.svg",
            svg::lines(
                &[
                    ("accuracy".to_string(), pts(|r| r.report.accuracy)),
                    ("mean confidence".to_string(), pts(|r| r.report.mean_confidence)),
                    ("ece".to_string(), pts(|r| r.report.ece)),
                ],
                "rollout count ablation",
                "log2 K",
                "value",
            ),
        )?;
    }
    let checks = ablate_checks(&rows, &thresholds);
    out.write("checks.json", json(&checks)?)?;
    let lines = rows
        .iter()
        .map(|(k, r)| format!("K={k}: accuracy {:.4} ocg {:+.4} ece {:.4}", r.report.accuracy, r.report.ocg, r.report.ece))
        .collect();
    Ok(Outcome { out_dir: out.commit()?, summary: lines, checks, enforce: common.strict })
}

/// Moves `b` past `a`'s prompt ids when the two ranges overlap.
pub fn disjoint_domain(a: &WorldSpec, mut b: WorldSpec) -> WorldSpec {
    let a_end = a.prompt_id_offset as u64 + a.num_prompts as u64;
    let b_end = b.prompt_id_offset as u64 + b.num_prompts as u64;
    if (b.prompt_id_offset as u64) < a_end && (a.prompt_id_offset as u64) < b_end {
        b.prompt_id_offset = a_end as u32;
    }
    b
}

pub struct ContinualRun {
    pub name: String,
    pub regime: Regime,
    /// `[after A on A, after A on B, after B on A, after B on B]`.
    pub reports: [CalibrationReport; 4],
    pub snapshot: String,
    pub logs: [TrainingLog; 2],
}

const SETTINGS: [(&str, &str, &str); 4] = [("after_a", "a", "id"), ("after_a", "b", "ood"), ("after_b", "a", "ct_source"), ("after_b", "b", "ct_target")];

fn continual_checks(runs: &[ContinualRun], t: &Thresholds) -> Vec<Check> {
    let mut checks = Vec::new();
    let opd = runs.iter().find(|r| r.regime == Regime::Opd);
    let caopd = runs.iter().find(|r| r.regime == Regime::Caopd);
    if let Some(o) = opd {
        checks.push(Check::new(
            "OPD calibration on A does not recover after B",
            o.reports[2].ece >= o.reports[0].ece,
            format!("ece on A {} -> {}", o.reports[0].ece, o.reports[2].ece),
        ));
    }
    if let (Some(o), Some(c)) = (opd, caopd) {
        checks.push(Check::new(
            "target replacement keeps A calibrated after B",
            c.reports[2].ece < o.reports[2].ece,
            format!("{} vs {}", c.reports[2].ece, o.reports[2].ece),
        ));
        let diff = (c.reports[3].accuracy - o.reports[3].accuracy).abs();
        checks.push(Check::new(
            "accuracy on B unchanged by target replacement",
            diff <= t.accuracy_band,
            format!("difference {diff} (band {})", t.accuracy_band),
        ));
    }
    checks
}

/// Trains on domain A, then continues on domain B with the same settings.
pub fn continual(manifest_path: &Path, common: &Common) -> Result<Outcome, CliError> {
    let m = Manifest::load(manifest_path)?;
    let spec_b = m
        .world_b
        .as_ref()
        .ok_or_else(|| CliError::Input("continual needs world_b in the manifest".into()))?;
    if m.runs.is_empty() {
        return Err(CliError::Input("manifest lists no train configs".into()));
    }
    let thresholds = common.thresholds(m.thresholds.as_ref().map(|t| &t.value))?;
    let a = build(&m.world.value)?;
    let b = build(&disjoint_domain(&m.world.value, spec_b.value.clone()))?;
    let init = Policy::from_worlds(&[&a, &b])?;
    let bins = common.bins;
    let run = |(name, c): (String, TrainConfig)| -> Result<ContinualRun, CliError> {
        let first = run_training(&name, &c, &a, init.clone(), bins)?;
        let snapshot = first.policy.to_checkpoint_json()?;
        let after_a_on_b = exact_report(&first.policy, &b, bins)?;
        let second = run_training(&name, &c, &b, first.policy, bins)?;
        let after_b_on_a = exact_report(&second.policy, &a, bins)?;
        Ok(ContinualRun {
            name,
            regime: c.regime,
            reports: [first.report, after_a_on_b, after_b_on_a, second.report],
            snapshot,
            logs: [first.log, second.log],
        })
    };
    let configs = m.configs(common.seed);
    let runs: Vec<ContinualRun> = if common.parallel {
        configs.into_par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        configs.into_iter().map(run).collect::<Result<_, _>>()?
    };

    let out = OutputDir::create(&resolve_out(common.out.as_deref(), m.out.as_deref(), "continual"))?;
    out.write_provenance(&m.text, &m.inputs())?;
    let mut csv = String::from("name,regime,phase,domain,setting,accuracy,mean_confidence,ocg,ece,brier,spr,auroc\n");
    for r in &runs {
        for ((phase, domain, setting), rep) in SETTINGS.iter().zip(&r.reports) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.name,
                r.regime.label(),
                phase,
                domain,
                setting,
                rep.accuracy,
                rep.mean_confidence,
                rep.ocg,
                rep.ece,
                rep.brier,
                opt(rep.spr),
                opt(rep.auroc)
            ));
            out.write(format!("{}/{phase}_on_{domain}.json", r.name), json(rep)?)?;
        }
        out.write(format!("{}/snapshot_after_a.json", r.name), &r.snapshot)?;
        out.write(format!("{}/log_a.csv", r.name), r.logs[0].to_csv())?;
        out.write(format!("{}/log_b.csv", r.name), r.logs[1].to_csv())?;
        if common.svg || m.emit_svg {
            out.write(format!("{}/reliability_ct_source.svg", r.name), svg::reliability(&r.reports[2], &format!("{} on A after B", r.name)))?;
        }
    }
    out.write("continual.csv", &csv)?;
    let checks = continual_checks(&runs, &thresholds);
    out.write("checks.json", json(&checks)?)?;
    let lines = runs
        .iter()
        .map(|r| {
            format!(
                "{}: ece on A {:.4} -> {:.4}, accuracy on B {:.4}",
                r.name, r.reports[0].ece, r.reports[2].ece, r.reports[3].accuracy
            )
        })
        .collect();
    Ok(Outcome { out_dir: out.commit()?, summary: lines, checks, enforce: common.strict })
}
