use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

const DEFAULTS: &str = include_str!("../../../configs/thresholds.toml");

/// Acceptance tolerances, kept in one checked-in file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Largest |OCG| counted as calibrated.
    pub ocg_band: f64,
    /// Largest accuracy difference counted as unchanged.
    pub accuracy_band: f64,
    pub opd_min_ocg: f64,
    pub opd_min_confidence: f64,
    pub identity_tol: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self::from_toml_str(DEFAULTS).expect("bundled thresholds parse")
    }
}

impl Thresholds {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
