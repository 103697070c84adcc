use std::path::{Path, PathBuf};

use crate::CliError;

pub const VERSION_STAMP: &str = concat!("caopd ", env!("CARGO_PKG_VERSION"), "\n");

/// Env var naming the default output root.
pub const OUT_DIR_ENV: &str = "CAOPD_OUT_DIR";

/// Files are written into a hidden staging directory that is renamed onto
/// the final path on commit, so a crashed run never leaves a partial result.
pub struct OutputDir {
    target: PathBuf,
    staging: PathBuf,
}

fn io(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

impl OutputDir {
    pub fn create(target: &Path) -> Result<Self, CliError> {
        let name = target
            .file_name()
            .ok_or_else(|| CliError::Input(format!("output path {} has no final component", target.display())))?;
        let staging = target.with_file_name(format!(".{}.staging", name.to_string_lossy()));
        if staging.exists() {
            std::fs::remove_dir_all(&staging).map_err(|e| io(&staging, e))?;
        }
        std::fs::create_dir_all(&staging).map_err(|e| io(&staging, e))?;
        let out = Self { target: target.to_path_buf(), staging };
        out.write("VERSION", VERSION_STAMP)?;
        Ok(out)
    }

    pub fn path(&self) -> &Path {
        &self.target
    }

    pub fn write(&self, rel: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.staging.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
        }
        std::fs::write(&p, contents).map_err(|e| io(&p, e))
    }

    /// Manifest copy plus every file it references.
    pub fn write_provenance(&self, manifest_text: &str, inputs: &[(String, String)]) -> Result<(), CliError> {
        self.write("manifest.toml", manifest_text)?;
        for (name, text) in inputs {
            self.write(Path::new("inputs").join(name), text)?;
        }
        Ok(())
    }

    pub fn commit(self) -> Result<PathBuf, CliError> {
        if self.target.exists() {
            std::fs::remove_dir_all(&self.target).map_err(|e| io(&self.target, e))?;
        }
        std::fs::rename(&self.staging, &self.target).map_err(|e| io(&self.target, e))?;
        Ok(self.target)
    }
}

/// `--out`, then the manifest's `out`, then `$CAOPD_OUT_DIR/<command>`, then `runs/<command>`.
pub fn resolve_out(flag: Option<&Path>, manifest: Option<&Path>, command: &str) -> PathBuf {
    if let Some(p) = flag.or(manifest) {
        return p.to_path_buf();
    }
    let root = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command)
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
