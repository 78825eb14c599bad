//! Run manifests: what ran, with which resolved config, over which inputs,
//! producing which outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::FileConfig;

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    /// Resolved config; can be passed back through `--config`.
    pub config: FileConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Wall-clock measurements, kept out of the outputs so their digests
    /// stay reproducible.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings: BTreeMap<String, f64>,
}

pub fn now_unix() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

/// Digest over the dataset's own files (manifest plus data blocks), so
/// outputs written next to them do not change it.
pub fn dataset_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && (p.file_name().is_some_and(|n| n == attralign::dataset::MANIFEST_FILE)
                    || p.extension().is_some_and(|e| e == "f64"))
        })
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for p in &names {
        let name = p.file_name().unwrap_or_default().to_string_lossy();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(file_digest(p)?.as_bytes());
        h.update([0]);
    }
    Ok(format!("{:x}", h.finalize()))
}

/// Collects inputs and outputs while a command runs.
pub struct ManifestBuilder {
    m: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: &[String], threads: Option<usize>) -> Self {
        Self {
            m: RunManifest {
                command: command.into(),
                argv: argv.to_vec(),
                config: FileConfig::default(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                seed: None,
                threads,
                version: env!("CARGO_PKG_VERSION").into(),
                started_unix: now_unix(),
                finished_unix: 0.0,
                timings: BTreeMap::new(),
            },
        }
    }

    pub fn config(&mut self, cfg: FileConfig) -> &mut Self {
        self.m.config = cfg;
        self
    }

    pub fn seed(&mut self, seed: u64) -> &mut Self {
        self.m.seed = Some(seed);
        self
    }

    pub fn timing(&mut self, name: &str, secs: f64) -> &mut Self {
        self.m.timings.insert(name.into(), secs);
        self
    }

    pub fn input_dataset(&mut self, dir: &Path) -> Result<&mut Self> {
        self.m.inputs.insert(dir.display().to_string(), dataset_digest(dir)?);
        Ok(self)
    }

    pub fn input_file(&mut self, path: &Path) -> Result<&mut Self> {
        self.m.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) -> Result<&mut Self> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
            entries.sort();
            for p in entries.into_iter().filter(|p| !p.ends_with(MANIFEST_NAME)) {
                self.output(&p)?;
            }
        } else {
            self.m.outputs.insert(path.display().to_string(), file_digest(path)?);
        }
        Ok(self)
    }

    /// Writes the manifest to `path` and returns it.
    pub fn finish(mut self, path: &Path) -> Result<RunManifest> {
        self.m.finished_unix = now_unix();
        let text = serde_json::to_string_pretty(&self.m).expect("manifest serializes");
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(self.m)
    }
}

/// Manifest location for an output that is a single file.
pub fn manifest_beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}
