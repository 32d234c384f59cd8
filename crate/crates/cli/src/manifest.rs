//! Per-stage provenance manifests. Every stage records the content hashes
//! of what it read and what it wrote, so any artifact can be re-derived
//! from raw inputs plus config and seed, and staleness is detectable: an
//! artifact is stale when the inputs recorded at its production no longer
//! match the files on disk.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    /// Relative artifact path → sha256 at read time.
    pub inputs: BTreeMap<String, String>,
    /// Relative artifact path → sha256 at write time.
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, u64>,
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| {
        CliError::Other(format!("cannot hash {}: {e}", path.display()))
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("manifests")
}

pub fn manifest_path(run_dir: &Path, stage: &str) -> PathBuf {
    manifest_dir(run_dir).join(format!("{stage}.json"))
}

pub fn write_manifest(run_dir: &Path, manifest: &Manifest) -> Result<(), CliError> {
    let dir = manifest_dir(run_dir);
    fs::create_dir_all(&dir).map_err(|e| CliError::Other(e.to_string()))?;
    let path = manifest_path(run_dir, &manifest.stage);
    let json = serde_json::to_string_pretty(manifest).map_err(|e| CliError::Other(e.to_string()))?;
    fs::write(&path, json).map_err(|e| CliError::Other(e.to_string()))?;
    Ok(())
}

pub fn read_manifests(run_dir: &Path) -> Result<Vec<Manifest>, CliError> {
    let dir = manifest_dir(run_dir);
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::Other(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    entries.sort();
    for path in entries {
        let text = fs::read_to_string(&path).map_err(|e| CliError::Other(e.to_string()))?;
        out.push(serde_json::from_str(&text).map_err(|e| CliError::Other(e.to_string()))?);
    }
    Ok(out)
}

/// Find the stage whose outputs include `rel` (the most recent writer wins
/// because stages overwrite their own manifest on rerun).
pub fn producer_of<'a>(manifests: &'a [Manifest], rel: &str) -> Option<&'a Manifest> {
    manifests.iter().find(|m| m.outputs.contains_key(rel))
}

/// Verify that an input artifact exists and is fresh: the producer's
/// recorded inputs still hash to the same values on disk.
pub fn require_fresh(run_dir: &Path, rel: &str, force: bool) -> Result<PathBuf, CliError> {
    let path = run_dir.join(rel);
    if !path.exists() {
        return Err(CliError::MissingArtifact(path));
    }
    if force {
        return Ok(path);
    }
    let manifests = read_manifests(run_dir)?;
    if let Some(producer) = producer_of(&manifests, rel) {
        // The artifact itself must match what its producer wrote.
        let current = hash_file(&path)?;
        if producer.outputs[rel] != current {
            return Err(CliError::Stale {
                artifact: rel.to_string(),
                cause: format!("{rel} was modified after stage {} wrote it", producer.stage),
            });
        }
        for (input_rel, recorded) in &producer.inputs {
            let input_path = run_dir.join(input_rel);
            if !input_path.exists() {
                return Err(CliError::Stale {
                    artifact: rel.to_string(),
                    cause: format!("input {input_rel} of stage {} is gone", producer.stage),
                });
            }
            let current = hash_file(&input_path)?;
            if &current != recorded {
                return Err(CliError::Stale {
                    artifact: rel.to_string(),
                    cause: format!(
                        "input {input_rel} changed since stage {} produced {rel}",
                        producer.stage
                    ),
                });
            }
        }
    }
    Ok(path)
}
