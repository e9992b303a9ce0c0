//! Output files that are removed again if the command fails.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ptkit_core::fsutil::atomic_write;

/// Files written by one command run. Dropped without `commit`, every file
/// it wrote is deleted.
#[derive(Debug, Default)]
pub struct Outputs {
    written: Vec<PathBuf>,
    created_dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Creates `dir` (and parents); only directories created here are
    /// removed on failure, and only when empty.
    pub fn dir(&mut self, dir: &Path) -> Result<()> {
        let mut missing = Vec::new();
        let mut cur = Some(dir);
        while let Some(d) = cur {
            if d.as_os_str().is_empty() || d.exists() {
                break;
            }
            missing.push(d.to_path_buf());
            cur = d.parent();
        }
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        missing.reverse();
        self.created_dirs.extend(missing);
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent() {
            self.dir(parent)?;
        }
        atomic_write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    /// Records a file written by other code.
    pub fn track(&mut self, path: PathBuf) {
        self.written.push(path);
    }

    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.written)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            if fs::remove_file(p).is_ok() {
                log::info!("removed partial output {}", p.display());
            }
        }
        for d in self.created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!("{what} {} does not exist or is not a file", path.display());
    }
    Ok(())
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} {} does not exist or is not a directory", path.display());
    }
    Ok(())
}

/// Fails when an output would overwrite one of the inputs.
pub fn distinct(output: &Path, inputs: &[&Path]) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).ok();
    if let Some(out) = canon(output) {
        if inputs.iter().any(|i| canon(i).as_ref() == Some(&out)) {
            bail!("output {} would overwrite an input", output.display());
        }
    }
    Ok(())
}
