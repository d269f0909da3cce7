//! Run manifests: what went in, what came out, and under which configuration.

use std::path::{Path, PathBuf};

use anyhow::Context;
use hsicgru::checkpoint::sha256_hex;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// No timestamps, so identical runs write identical manifests.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: Option<u64>,
    pub config_hash: Option<String>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: None,
            config_hash: None,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn inputs<P: AsRef<Path>>(mut self, paths: &[P]) -> anyhow::Result<Self> {
        for p in paths {
            self.inputs.push(FileDigest::of(p.as_ref())?);
        }
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Writes `<command>_manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(format!("{}_manifest.json", self.command));
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }
}
