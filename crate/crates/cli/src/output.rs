//! Append-only output directory with collision checks and a manifest per run.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::error::CliError;

pub const SUBDIRS: [&str; 7] = ["panels", "fits", "forecasts", "stress", "ladder", "window", "manifests"];

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

pub struct OutDir {
    root: PathBuf,
    force: bool,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
}

fn digest(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl OutDir {
    pub fn open(root: &Path, force: bool) -> Result<Self, CliError> {
        for d in SUBDIRS {
            let p = root.join(d);
            std::fs::create_dir_all(&p).map_err(|e| CliError::Io(p, e))?;
        }
        Ok(OutDir {
            root: root.to_path_buf(),
            force,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Label for a path in manifests: relative to the output root when it
    /// lives there, as given otherwise.
    fn label(&self, p: &Path) -> String {
        p.strip_prefix(&self.root)
            .map(|r| r.to_string_lossy().replace('\\', "/"))
            .unwrap_or_else(|_| p.to_string_lossy().into_owned())
    }

    /// Hashes an input file into the manifest.
    pub fn record_input(&mut self, p: &Path) -> Result<(), CliError> {
        let bytes = std::fs::read(p).map_err(|e| CliError::Io(p.to_path_buf(), e))?;
        let rec = FileRecord {
            path: self.label(p),
            sha256: digest(&bytes),
        };
        if !self.inputs.iter().any(|r| r.path == rec.path) {
            self.inputs.push(rec);
        }
        Ok(())
    }

    /// Writes `rel` unless a different file is already there. Rewriting
    /// identical bytes is a no-op.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(rel);
        match std::fs::read(&p) {
            Ok(existing) if existing == bytes => {}
            Ok(_) if !self.force => return Err(CliError::Collision(p)),
            _ => std::fs::write(&p, bytes).map_err(|e| CliError::Io(p.clone(), e))?,
        }
        self.outputs.push(FileRecord {
            path: rel.to_string(),
            sha256: digest(bytes),
        });
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    /// Writes `manifests/<name>.json` listing config, inputs and outputs.
    pub fn finish(mut self, name: &str, command: &str, cfg: &RunConfig) -> Result<(), CliError> {
        let manifest = serde_json::json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": cfg.seed()?,
            "config_hash": cfg.hash(),
            "config": cfg.values,
            "inputs": self.inputs,
            "outputs": self.outputs,
        });
        let rel = format!("manifests/{name}.json");
        self.write_json(&rel, &manifest)
    }
}
