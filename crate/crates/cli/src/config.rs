//! Optional JSON config file. Each command reads the sections it needs;
//! command-line flags override file values, which override defaults.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use attralign::dataset::SynthConfig;
use attralign::mining::NegativeKind;
use attralign::model::ModelSpec;
use attralign::training::{Arm, TrainConfig};
use attralign_attribgen::{EndpointConfig, PipelineOptions};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mining: Option<MiningSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vqa: Option<EndpointConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PipelineOptions>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningSection {
    pub k: usize,
    pub kind: NegativeKind,
    pub seed: u64,
}

impl Default for MiningSection {
    fn default() -> Self {
        Self { k: attralign::mining::DEFAULT_K, kind: NegativeKind::Hard, seed: attralign::dataset::DEFAULT_SEED }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSection {
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
}

impl Default for AblationSection {
    fn default() -> Self {
        let d = attralign::training::AblationConfig::default();
        Self { seeds: d.seeds, arms: d.arms }
    }
}

/// Reads a config file. A run manifest is accepted too, in which case its
/// resolved config is used, so any run can be repeated from its manifest.
pub fn load(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if value.get("command").is_some() {
        if let Some(cfg) = value.get_mut("config") {
            value = cfg.take();
        }
    }
    serde_json::from_value(value).with_context(|| format!("config {}", path.display()))
}
