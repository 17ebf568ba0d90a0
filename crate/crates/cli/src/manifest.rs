//! Per-command record of what was run and what it produced.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Started,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// Dataset draw and network initialization.
    pub training: u64,
    pub bound: u64,
    pub scenario: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    /// Set when the hash covers a canonical form rather than the raw bytes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hashed_as: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: Status,
    pub output_dir: PathBuf,
    pub seeds: Seeds,
    /// The fully resolved config as TOML; feeding it back through `--config`
    /// reproduces the run.
    pub config_toml: String,
    pub config: Config,
    pub inputs: Vec<Artifact>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    /// Creates the output directory and writes the manifest before anything
    /// else goes there.
    pub fn start(command: &str, out: &Path, config: &Config) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let m = Self {
            command: command.to_string(),
            status: Status::Started,
            output_dir: out.to_path_buf(),
            seeds: Seeds {
                training: config.training.seed,
                bound: config.bound.seed,
                scenario: config.scenario.resolve().seed,
            },
            config_toml: toml::to_string(config).context("serializing config")?,
            config: config.clone(),
            inputs: Vec::new(),
            artifacts: Vec::new(),
        };
        m.write()?;
        Ok(m)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(Artifact {
            path: path.to_path_buf(),
            sha256: hash_file(path)?,
            hashed_as: None,
        });
        self.write()
    }

    /// Records a file written under the output directory.
    pub fn artifact(&mut self, name: &str) -> Result<()> {
        let sha256 = hash_file(&self.output_dir.join(name))?;
        self.artifacts.push(Artifact {
            path: name.into(),
            sha256,
            hashed_as: None,
        });
        Ok(())
    }

    /// Records an artifact whose hash is taken over `canonical` instead of
    /// the file, e.g. a log with wall-time columns zeroed.
    pub fn artifact_canonical(&mut self, name: &str, canonical: &[u8], how: &str) {
        self.artifacts.push(Artifact {
            path: name.into(),
            sha256: sha256_hex(canonical),
            hashed_as: Some(how.to_string()),
        });
    }

    pub fn finish(mut self) -> Result<Self> {
        self.status = Status::Complete;
        self.write()?;
        Ok(self)
    }

    fn write(&self) -> Result<()> {
        let path = self.output_dir.join(FILE_NAME);
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
