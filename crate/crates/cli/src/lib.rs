//! Experiment commands behind the `caopd` binary. Each command writes a
//! self-contained output directory and returns the checks it evaluated.

pub mod commands;
pub mod manifest;
pub mod output;
pub mod svg;

use std::fmt;
use std::path::PathBuf;

use caopd_core::Thresholds;

pub use commands::{ablate_k, continual, eval_transcripts, train, verify_propositions};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or invalid input; exit code 2.
    Input(String),
    /// Anything that failed while running; exit code 1.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<caopd_core::Error> for CliError {
    fn from(e: caopd_core::Error) -> Self {
        use caopd_core::Error as E;
        match e {
            E::InvalidSpec(_)
            | E::InvalidConfig(_)
            | E::InvalidContext(_)
            | E::Ingest { .. }
            | E::TomlDe(_)
            | E::Json(_)
            | E::Io(_)
            | E::AllUnparsable
            | E::EmptyInput => CliError::Input(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Common {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub svg: bool,
    pub bins: usize,
    pub threshold_file: Option<PathBuf>,
    /// Turn failed directional checks of train, ablate-k and continual into exit code 1.
    pub strict: bool,
    pub parallel: bool,
}

impl Default for Common {
    fn default() -> Self {
        Self {
            out: None,
            seed: None,
            svg: false,
            bins: 10,
            threshold_file: None,
            strict: false,
            parallel: false,
        }
    }
}

impl Common {
    pub fn thresholds(&self, from_manifest: Option<&Thresholds>) -> Result<Thresholds, CliError> {
        match &self.threshold_file {
            Some(p) => Ok(manifest::load_thresholds(p)?.value),
            None => Ok(from_manifest.cloned().unwrap_or_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summary: Vec<String>,
    pub checks: Vec<Check>,
    /// Whether failed checks make the command fail.
    pub enforce: bool,
}

impl Outcome {
    pub fn failed(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn exit_code(&self) -> u8 {
        if self.enforce && !self.failed().is_empty() {
            1
        } else {
            0
        }
    }
}
