use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub code_version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub wall_clock_seconds: f64,
}

pub struct Recorder {
    command: String,
    started: Instant,
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, out_dir: &Path, inputs: &[&Path]) -> Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        Ok(Self {
            command: command.to_string(),
            started: Instant::now(),
            out_dir: out_dir.to_path_buf(),
            inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes `contents` into the output directory and records it.
    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path.clone());
        Ok(path)
    }

    /// Records a file some other code already wrote.
    pub fn track(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn finish(self, seed: Option<u64>, config: serde_json::Value) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
