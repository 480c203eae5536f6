use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Result, RuntimeContext};

pub const RUN_MANIFEST: &str = "run-manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Versions {
    #[serde(rename = "mammocolor-cli")]
    cli: &'static str,
    mammocolor: &'static str,
    #[serde(rename = "mammocolor-study")]
    study: &'static str,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    versions: Versions,
    seed: Option<u64>,
    options: &'a Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    started_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    finished_at: Option<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).runtime(&format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Tracks one command's inputs and outputs; `finish` writes the manifest.
pub struct Run {
    command: String,
    dir: PathBuf,
    seed: Option<u64>,
    threads: Option<usize>,
    options: Value,
    deterministic: bool,
    started: chrono::DateTime<chrono::Utc>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Run {
    pub fn new<C>(command: &str, dir: PathBuf, resolved: &crate::config::Resolved<C>) -> Run {
        Run {
            command: command.into(),
            dir,
            seed: resolved.seed,
            threads: resolved.threads,
            options: resolved.effective.clone(),
            deterministic: resolved.deterministic,
            started: chrono::Utc::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn input(&mut self, path: &Path) {
        if !self.inputs.iter().any(|p| p == path) {
            self.inputs.push(path.to_path_buf());
        }
    }

    /// Path for an output relative to the output directory.
    pub fn output(&mut self, rel: &str) -> PathBuf {
        if !self.outputs.iter().any(|p| p == rel) {
            self.outputs.push(rel.to_string());
        }
        self.dir.join(rel)
    }

    pub fn finish(self) -> Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| Ok(FileDigest { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<Result<Vec<_>>>()?;
        let mut outputs = self
            .outputs
            .iter()
            .map(|p| Ok(FileDigest { path: p.clone(), sha256: sha256_file(&self.dir.join(p))? }))
            .collect::<Result<Vec<_>>>()?;
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let stamp = |t: chrono::DateTime<chrono::Utc>| (!self.deterministic).then(|| t.to_rfc3339());
        let manifest = RunManifest {
            command: &self.command,
            versions: Versions {
                cli: env!("CARGO_PKG_VERSION"),
                mammocolor: mammocolor::VERSION,
                study: mammocolor_study::VERSION,
            },
            seed: self.seed,
            options: &self.options,
            inputs,
            outputs,
            threads: if self.deterministic { None } else { self.threads },
            started_at: stamp(self.started),
            finished_at: stamp(chrono::Utc::now()),
        };
        write_json(&self.dir.join(RUN_MANIFEST), &manifest)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).runtime("serializing")?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).runtime(&format!("writing {}", path.display()))
}
