use std::path::{Path, PathBuf};

use caopd_core::{Thresholds, TrainConfig, WorldSpec};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    emit_svg: bool,
    world: PathBuf,
    world_b: Option<PathBuf>,
    #[serde(default)]
    train: Vec<PathBuf>,
    thresholds: Option<PathBuf>,
}

/// An input file read once and kept verbatim for the provenance copy.
#[derive(Debug, Clone)]
pub struct Input<T> {
    pub path: PathBuf,
    pub text: String,
    pub value: T,
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    /// Output subdirectory, taken from the config file stem.
    pub name: String,
    pub config: Input<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub path: PathBuf,
    pub text: String,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub emit_svg: bool,
    pub world: Input<WorldSpec>,
    pub world_b: Option<Input<WorldSpec>>,
    pub runs: Vec<RunSpec>,
    pub thresholds: Option<Input<Thresholds>>,
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse<T>(path: &Path, f: impl Fn(&str) -> caopd_core::Result<T>) -> Result<Input<T>, CliError> {
    let text = read(path)?;
    let value = f(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(Input { path: path.to_path_buf(), text, value })
}

pub fn load_world(path: &Path) -> Result<Input<WorldSpec>, CliError> {
    parse(path, WorldSpec::from_toml_str)
}

pub fn load_thresholds(path: &Path) -> Result<Input<Thresholds>, CliError> {
    parse(path, Thresholds::from_toml_str)
}

impl Manifest {
    /// Relative paths inside the manifest resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read(path)?;
        let file: ManifestFile =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &Path| dir.join(p);

        let mut runs = Vec::new();
        for p in &file.train {
            let p = resolve(p);
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::Input(format!("{}: no file name", p.display())))?;
            if runs.iter().any(|r: &RunSpec| r.name == name) {
                return Err(CliError::Input(format!("duplicate train config name {name:?}")));
            }
            runs.push(RunSpec { name, config: parse(&p, TrainConfig::from_toml_str)? });
        }
        Ok(Self {
            path: path.to_path_buf(),
            text,
            seed: file.seed,
            out: file.out.map(|o| resolve(&o)),
            emit_svg: file.emit_svg,
            world: load_world(&resolve(&file.world))?,
            world_b: file.world_b.map(|p| load_world(&resolve(&p))).transpose()?,
            runs,
            thresholds: file.thresholds.map(|p| load_thresholds(&resolve(&p))).transpose()?,
        })
    }

    /// Train configs with the effective seed applied.
    pub fn configs(&self, seed_override: Option<u64>) -> Vec<(String, TrainConfig)> {
        let seed = seed_override.or(self.seed);
        self.runs
            .iter()
            .map(|r| {
                let mut c = r.config.value.clone();
                if let Some(s) = seed {
                    c.seed = s;
                }
                (r.name.clone(), c)
            })
            .collect()
    }

    /// Every input file as `(name inside inputs/, contents)`.
    pub fn inputs(&self) -> Vec<(String, String)> {
        let name = |p: &Path| p.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut v = vec![(name(&self.world.path), self.world.text.clone())];
        if let Some(b) = &self.world_b {
            v.push((name(&b.path), b.text.clone()));
        }
        for r in &self.runs {
            v.push((name(&r.config.path), r.config.text.clone()));
        }
        if let Some(t) = &self.thresholds {
            v.push((name(&t.path), t.text.clone()));
        }
        v
    }
}
