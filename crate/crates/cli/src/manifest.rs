use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let hash = Sha256::digest(&bytes);
    Ok(InputDigest {
        path: path.to_path_buf(),
        sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// Everything needed to rerun a command; written as `manifest.json`.
#[derive(Serialize)]
pub struct RunManifest<'a, O: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub options: &'a O,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub results: serde_json::Value,
    pub duration_seconds: f64,
}

pub struct Recorder {
    started: Instant,
    command: &'static str,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Recorder {
            started: Instant::now(),
            command,
        }
    }

    pub fn finish<O: Serialize>(
        self,
        out: &Path,
        options: &O,
        seed: u64,
        inputs: &[PathBuf],
        outputs: &[&str],
        results: serde_json::Value,
    ) -> Result<()> {
        let manifest = RunManifest {
            tool: "proxplain",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            options,
            seed,
            inputs: inputs.iter().map(|p| digest(p)).collect::<Result<_>>()?,
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            results,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = out.join("manifest.json");
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }
}
