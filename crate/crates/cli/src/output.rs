//! Output directory bookkeeping and the run manifest.

use crate::CliError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Error as it appears on stderr and in a failed run's manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ErrorReport {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl From<&CliError> for ErrorReport {
    fn from(e: &CliError) -> Self {
        Self { code: e.exit_code(), kind: e.kind(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub kind: &'static str,
    pub config_version: u32,
    pub seed: u64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
    pub config: serde_json::Value,
    pub outputs: Vec<OutputEntry>,
}

/// Writes files under one directory and remembers their checksums.
pub struct OutputDir {
    root: PathBuf,
    entries: Vec<OutputEntry>,
}

impl OutputDir {
    /// Creates `root`, or clears the outputs of an earlier run there. Any
    /// other content is refused so that nothing in the directory is left
    /// out of the new manifest.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        let io = |p: &Path, e: std::io::Error| CliError::Io(format!("{}: {e}", p.display()));
        fs::create_dir_all(root).map_err(|e| io(root, e))?;
        let previous = root.join(MANIFEST);
        if previous.exists() {
            let text = fs::read_to_string(&previous).map_err(|e| io(&previous, e))?;
            let old: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", previous.display())))?;
            for entry in old["outputs"].as_array().into_iter().flatten() {
                let Some(rel) = entry["path"].as_str() else { continue };
                let path = root.join(rel);
                if path.starts_with(root) && !rel.contains("..") && path.is_file() {
                    fs::remove_file(&path).map_err(|e| io(&path, e))?;
                }
            }
            fs::remove_file(&previous).map_err(|e| io(&previous, e))?;
            prune_empty_dirs(root).map_err(|e| io(root, e))?;
        }
        if fs::read_dir(root).map_err(|e| io(root, e))?.next().is_some() {
            return Err(CliError::Validation(format!("output directory {} holds files from outside a previous run", root.display())));
        }
        Ok(Self { root: root.to_path_buf(), entries: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (a `/`-separated relative path).
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(OutputEntry { path: rel.to_string(), bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(bytes)) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    /// Writes the manifest listing every recorded output in path order.
    pub fn finish(mut self, mut manifest: Manifest) -> Result<Manifest, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.outputs = self.entries.clone();
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        let path = self.root.join(MANIFEST);
        fs::write(&path, s).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}

fn prune_empty_dirs(dir: &Path) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            prune_empty_dirs(&path)?;
            if fs::read_dir(&path)?.next().is_none() {
                fs::remove_dir(&path)?;
            }
        }
    }
    Ok(())
}
