//! Parsing and scoring of model transcripts that end in a verbalized
//! `Confidence: <value>` line.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CalibrationReport, PredictionRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_text: Option<String>,
    pub response_text: String,
    pub gold: String,
    pub domain_tag: String,
}

static CONFIDENCE_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*Confidence:\s*(\d+(?:\.\d*)?|\.\d+)\s*$").unwrap());
static ACTION_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*Action:\s*(.*?)\s*$").unwrap());
static ACTION_INPUT_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*Action Input:(.*)$").unwrap());

/// Value of the last `Confidence:` line carrying a plain decimal in `[0, 1]`.
pub fn parse_confidence(text: &str) -> Option<f64> {
    let caps = text.lines().rev().find_map(|l| CONFIDENCE_LINE.captures(l))?;
    let v: f64 = caps[1].parse().ok()?;
    (0.0..=1.0).contains(&v).then_some(v)
}

/// Single letter A-D inside the last complete `<answer>...</answer>` block.
pub fn parse_mcq_answer(text: &str) -> Option<char> {
    let mut last = None;
    let mut rest = text;
    while let Some(open) = rest.find("<answer>") {
        let after = &rest[open + "<answer>".len()..];
        match after.find("</answer>") {
            Some(close) => {
                last = Some(&after[..close]);
                rest = &after[close + "</answer>".len()..];
            }
            None => break,
        }
    }
    let inner = last?.trim();
    let mut chars = inner.chars();
    match (chars.next(), chars.next()) {
        (Some(c @ 'A'..='D'), None) => Some(c),
        _ => None,
    }
}

/// Extracts a brace-balanced object from the start of `s` (after leading
/// whitespace). Braces inside JSON strings are ignored.
fn balanced_object(s: &str) -> Option<&str> {
    let start = s.find(|c: char| !c.is_whitespace())?;
    let body = &s[start..];
    if !body.starts_with('{') {
        return None;
    }
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in body.char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&body[..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Last `Action:` line and the raw `Action Input:` object following it.
pub fn parse_tool_action(text: &str) -> Option<(String, String)> {
    let lines: Vec<&str> = text.lines().collect();
    let (idx, action) = lines
        .iter()
        .enumerate()
        .rev()
        .find_map(|(i, l)| ACTION_LINE.captures(l).map(|c| (i, c[1].to_string())))?;
    if action.is_empty() {
        return None;
    }
    let input_idx = (idx + 1..lines.len()).find(|&i| ACTION_INPUT_LINE.is_match(lines[i]))?;
    let first = ACTION_INPUT_LINE.captures(lines[input_idx])?.get(1)?.as_str();
    // the payload may continue over the following lines
    let mut payload = first.to_string();
    for l in &lines[input_idx + 1..] {
        payload.push('\n');
        payload.push_str(l);
    }
    let object = balanced_object(&payload)?;
    Some((action, object.to_string()))
}

/// Strict JSONL reader; blank lines are skipped, ids must be unique.
pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Vec<TranscriptRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let err = |line: usize, message: String| Error::Ingest { path: path.to_path_buf(), line, message };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| err(n, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TranscriptRecord = serde_json::from_str(&line).map_err(|e| err(n, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(err(n, format!("duplicate id {:?}", rec.id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[TranscriptRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Mcq,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvaluation {
    pub mode: EvalMode,
    pub report: CalibrationReport,
    pub total: usize,
    pub format_failures: usize,
    pub format_failure_rate: f64,
    /// Confidence parsed but answer did not; scored incorrect.
    pub answer_unparsed: usize,
    pub note: String,
}

/// Correctness per record, `None` where the confidence line is missing.
pub fn prediction_records(records: &[TranscriptRecord], mode: EvalMode) -> (Vec<PredictionRecord>, usize, usize) {
    let mut out = Vec::new();
    let mut failures = 0;
    let mut unparsed = 0;
    for r in records {
        let Some(conf) = parse_confidence(&r.response_text) else {
            failures += 1;
            continue;
        };
        let correct = match mode {
            EvalMode::Mcq => parse_mcq_answer(&r.response_text).map(|c| r.gold.trim() == c.to_string()),
            EvalMode::Tool => parse_tool_action(&r.response_text).map(|(a, _)| a == r.gold.trim()),
        };
        if correct.is_none() {
            unparsed += 1;
        }
        let rec = PredictionRecord {
            confidence: conf,
            correct: correct.unwrap_or(false),
            weight: 1.0,
            tag: Some(r.domain_tag.clone()),
        };
        out.push(rec);
    }
    (out, failures, unparsed)
}

pub fn evaluate_transcripts(records: &[TranscriptRecord], mode: EvalMode, num_bins: usize) -> Result<TranscriptEvaluation> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (preds, failures, unparsed) = prediction_records(records, mode);
    if preds.is_empty() {
        return Err(Error::AllUnparsable);
    }
    let note = match mode {
        EvalMode::Mcq => "answer letter compared to gold; unparsable answers scored incorrect",
        EvalMode::Tool => "action name compared to gold, arguments not judged; unparsable actions scored incorrect",
    };
    Ok(TranscriptEvaluation {
        mode,
        report: CalibrationReport::from_records(&preds, num_bins)?,
        total: records.len(),
        format_failures: failures,
        format_failure_rate: failures as f64 / records.len() as f64,
        answer_unparsed: unparsed,
        note: note.to_string(),
    })
}
