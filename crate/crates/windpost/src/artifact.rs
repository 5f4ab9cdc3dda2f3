//! On-disk artifacts: trained forecasters with their normalization
//! statistics, plus self-describing run manifests with content hashes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::NormStats;
use crate::error::Result;
use crate::optim::TrainConfig;
use crate::verify::Forecaster;

/// A trained forecaster plus everything needed to apply it to new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub forecaster: Forecaster,
    pub norm_stats: NormStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
}

pub fn save_artifact(artifact: &Artifact, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(artifact)?)?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<Artifact> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

/// `manifest.json`: the command, its resolved configuration and seed, and
/// a content hash per output file. Rerunning from the manifest reproduces
/// identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub outputs: Vec<ManifestEntry>,
}

pub fn write_manifest(
    dir: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    outputs: &[PathBuf],
) -> Result<()> {
    let mut entries = Vec::with_capacity(outputs.len());
    for p in outputs {
        entries.push(ManifestEntry {
            file: p
                .strip_prefix(dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned(),
            sha256: sha256_hex(p)?,
        });
    }
    let manifest = Manifest {
        command: command.to_string(),
        config,
        seed,
        outputs: entries,
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}
