//! `manifest.json`: what produced a directory and checksums of what is in it.

use std::path::{Path, PathBuf};

use drivenhunt::harness::ExperimentConfig;
use drivenhunt::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub code_version: &'static str,
    pub seed: u64,
    /// Resolved invocation parameters beyond the config.
    pub params: serde_json::Value,
    pub config: Option<ExperimentConfig>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, params: serde_json::Value) -> Self {
        Manifest {
            command,
            code_version: env!("CARGO_PKG_VERSION"),
            seed,
            params,
            config: None,
            files: Vec::new(),
        }
    }

    /// Checksum `files` (relative to `dir`) and write the manifest next to them.
    pub fn write(mut self, dir: &Path, files: &[PathBuf]) -> Result<()> {
        let mut names: Vec<String> = files
            .iter()
            .map(|f| {
                f.strip_prefix(dir)
                    .unwrap_or(f)
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        names.sort();
        names.dedup();
        for name in names {
            let path = dir.join(&name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            self.files.push(FileEntry {
                path: name,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let text = serde_json::to_string_pretty(&self).map_err(|e| Error::invalid(e.to_string()))?;
        write_file(&dir.join(MANIFEST), format!("{text}\n").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    write_file(path, format!("{text}\n").as_bytes())
}

/// Load `--config` (or the defaults) and apply `--set` overrides.
pub fn resolve_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let base = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    base.with_overrides(overrides)
}
