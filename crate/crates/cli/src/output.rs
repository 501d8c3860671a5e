//! Run directories and manifests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Default output root when neither `--out` nor `CAPBOUND_OUT` is given.
pub const DEFAULT_ROOT: &str = "out";

/// What a command produced, before anything touches the disk.
pub struct Run {
    pub command: &'static str,
    /// Fully resolved parameters.
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    /// `(file name, contents)`, written in order.
    pub files: Vec<(String, Vec<u8>)>,
    /// Printed to stdout after the files are written.
    pub stdout: Option<String>,
}

impl Run {
    pub fn new(command: &'static str, config: Value) -> Self {
        Run {
            command,
            config,
            inputs: Vec::new(),
            files: Vec::new(),
            stdout: None,
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn json(mut self, name: &str, value: &impl Serialize) -> Result<Self> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(self)
    }

    pub fn raw(mut self, name: &str, bytes: Vec<u8>) -> Self {
        self.files.push((name.to_string(), bytes));
        self
    }
}

#[derive(Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    /// Digest of command, config and input digests; names the run directory.
    pub run_digest: String,
    pub config: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub output_dir: String,
    pub started_at: String,
    pub finished_at: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Where to write: `--out` verbatim, else `<root>/<command>/<timestamp>-<digest>`.
pub struct Destination {
    pub out: Option<PathBuf>,
    pub root: Option<PathBuf>,
}

/// Writes the run's files plus `manifest.json` and returns the directory.
pub fn write_run(run: Run, dest: &Destination, started: chrono::DateTime<Utc>) -> Result<PathBuf> {
    let inputs = run.inputs.iter().map(|p| digest_file(p)).collect::<Result<Vec<_>>>()?;
    let key = serde_json::json!({
        "command": run.command,
        "config": run.config,
        "inputs": inputs.iter().map(|d| &d.sha256).collect::<Vec<_>>(),
    });
    let run_digest = sha256_hex(serde_json::to_string(&key)?.as_bytes());
    let dir = match &dest.out {
        Some(dir) => dir.clone(),
        None => {
            let root = dest.root.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
            root.join(run.command)
                .join(format!("{}-{}", started.format("%Y%m%dT%H%M%SZ"), &run_digest[..12]))
        }
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut outputs = Vec::with_capacity(run.files.len());
    for (name, bytes) in &run.files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        outputs.push(FileDigest {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = RunManifest {
        command: run.command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        run_digest,
        config: run.config,
        inputs,
        outputs,
        output_dir: dir.display().to_string(),
        started_at: started.to_rfc3339_opts(SecondsFormat::Secs, true),
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    std::fs::write(dir.join("manifest.json"), bytes)?;
    if let Some(text) = run.stdout {
        print!("{text}");
    }
    Ok(dir)
}

/// Serializes rows to CSV bytes with a header taken from the row type.
pub fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?)
}
