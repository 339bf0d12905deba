//! Per-run manifest: what went in, what came out, and the full configuration.
//! No timestamps or thread counts, so identical runs give identical manifests.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use qpcm::config::RunConfig;
use qpcm::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub summary: serde_json::Value,
    /// Every configuration value, defaults included.
    pub config: String,
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Streaming digest of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Identifier of a pair dataset: the first 16 hex digits of its SHA-256.
pub fn dataset_id(sha256: &str) -> String {
    sha256[..16].to_string()
}

pub fn config_sha256(cfg: &RunConfig) -> String {
    sha256_bytes(cfg.echo().as_bytes())
}

impl Manifest {
    pub fn new(command: &'static str, cfg: &RunConfig) -> Self {
        Manifest {
            tool: "qpcm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            config_sha256: config_sha256(cfg),
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
            config: cfg.echo(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest { path: path.to_path_buf(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileDigest { path: path.to_path_buf(), sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = qpcm::payload::to_json(self);
        std::fs::write(path, text).map_err(|e| Error::file(path, e))
    }
}

/// `<path>.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
