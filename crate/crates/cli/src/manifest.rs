//! `manifest.json`: what produced an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use docrel::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    /// Resolved configuration, when the command takes one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Manifest {
            command: command.to_string(),
            args: argv.iter().skip(1).cloned().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: None,
            config_sha256: None,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, config: &docrel::config::Config) -> Self {
        let text = config.to_toml();
        self.config_sha256 = Some(sha256_text(&text));
        self.config = Some(text);
        self.seed = Some(config.seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Digests the listed files of `dir` and writes `dir/manifest.json`.
    pub fn write(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<()> {
        for p in outputs {
            let name = p.strip_prefix(dir).unwrap_or(p).display().to_string();
            self.outputs.insert(name, sha256_file(p)?);
        }
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}
