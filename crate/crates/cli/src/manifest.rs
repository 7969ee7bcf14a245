//! Per-command provenance record: config echo, seeds, artifact hashes and
//! image scaling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::images::Scaling;

#[derive(Debug, Serialize)]
struct ImageEntry {
    min: f64,
    max: f64,
    mapping: &'static str,
}

#[derive(Debug, Serialize)]
struct Document<'a> {
    command: &'a str,
    tool_version: &'static str,
    seeds: &'a BTreeMap<String, String>,
    artifacts: BTreeMap<String, String>,
    images: &'a BTreeMap<String, ImageEntry>,
    config: &'a ExperimentConfig,
}

#[derive(Debug)]
pub struct Manifest {
    command: String,
    dir: PathBuf,
    seeds: BTreeMap<String, String>,
    artifacts: Vec<PathBuf>,
    images: BTreeMap<String, ImageEntry>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, dir: &Path) -> Self {
        Self {
            command: command.into(),
            dir: dir.to_path_buf(),
            seeds: BTreeMap::new(),
            artifacts: Vec::new(),
            images: BTreeMap::new(),
        }
    }

    /// Seeds are stored as decimal strings so the full `u64` range survives.
    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.into(), value.to_string());
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    pub fn image(&mut self, paths: &[PathBuf], scaling: Scaling) {
        for p in paths {
            self.artifacts.push(p.clone());
            self.images.insert(
                self.relative(p),
                ImageEntry {
                    min: scaling.min,
                    max: scaling.max,
                    mapping: "round(255 * (v - min) / (max - min)), 0 if max == min",
                },
            );
        }
    }

    fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.dir).unwrap_or(p).display().to_string()
    }

    /// Hashes every recorded artifact and writes `manifest.toml` into the
    /// command's directory.
    pub fn write(&self, config: &ExperimentConfig) -> Result<PathBuf, CliError> {
        let mut artifacts = BTreeMap::new();
        for p in &self.artifacts {
            artifacts.insert(self.relative(p), sha256_file(p)?);
        }
        let doc = Document {
            command: &self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            seeds: &self.seeds,
            artifacts,
            images: &self.images,
            config,
        };
        let text = toml::to_string(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        let path = self.dir.join("manifest.toml");
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
