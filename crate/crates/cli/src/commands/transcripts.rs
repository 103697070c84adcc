use std::path::Path;

use caopd_core::transcripts::{evaluate_transcripts, ingest_jsonl};
use caopd_core::EvalMode;

use crate::output::{json, opt, resolve_out, OutputDir};
use crate::{svg, Check, CliError, Common, Outcome};

pub fn eval_transcripts(input: &Path, mode: EvalMode, max_format_failure: Option<f64>, common: &Common) -> Result<Outcome, CliError> {
    let records = ingest_jsonl(input)?;
    let eval = evaluate_transcripts(&records, mode, common.bins)?;
    let r = &eval.report;

    let out = OutputDir::create(&resolve_out(common.out.as_deref(), None, "eval-transcripts"))?;
    let name = input.file_name().unwrap_or_default().to_string_lossy().into_owned();
    let text = std::fs::read_to_string(input).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    out.write_provenance(
        &format!("input = {name:?}\nmode = {:?}\nbins = {}\n", json(&mode)?.trim().trim_matches('"'), common.bins),
        &[(name, text)],
    )?;
    out.write("calibration.json", json(r)?)?;
    out.write("evaluation.json", json(&eval)?)?;
    out.write("report.csv", r.to_csv())?;
    out.write("reliability.csv", r.bins_csv())?;
    if common.svg {
        out.write("reliability.svg", svg::reliability(r, "transcript reliability"))?;
    }
    let line = format!(
        "n={} accuracy={} mean_confidence={} ocg={} ece={} brier={} spr={} auroc={} format_failure_rate={} answer_unparsed={}",
        r.n,
        r.accuracy,
        r.mean_confidence,
        r.ocg,
        r.ece,
        r.brier,
        opt(r.spr),
        opt(r.auroc),
        eval.format_failure_rate,
        eval.answer_unparsed
    );
    out.write("summary.txt", format!("{line}\n"))?;
    let checks = match max_format_failure {
        Some(limit) => vec![Check::new(
            "format failure rate",
            eval.format_failure_rate <= limit,
            format!("{} (max {limit})", eval.format_failure_rate),
        )],
        None => Vec::new(),
    };
    Ok(Outcome { out_dir: out.commit()?, summary: vec![line], checks, enforce: true })
}
