//! Config hashing, manifests and atomic file writes shared by all stages.

use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{path} was produced by config {found}, expected {expected} (pass --force to accept)")]
    HashMismatch { path: String, expected: String, found: String },
}

impl ArtifactError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        ArtifactError::Io { path: path.display().to_string(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        ArtifactError::Format { path: path.display().to_string(), message: message.into() }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of a config section: SHA-256 of its canonical JSON, first 16 hex
/// digits.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    sha256_hex(&json)[..16].to_string()
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| ArtifactError::io(parent, e))?;
        }
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    let mut f = std::fs::File::create(&tmp).map_err(|e| ArtifactError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| ArtifactError::io(&tmp, e))?;
    f.sync_all().map_err(|e| ArtifactError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ArtifactError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ArtifactError::format(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ArtifactError> {
    let text = std::fs::read_to_string(path).map_err(|e| ArtifactError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ArtifactError::format(path, e.to_string()))
}

/// `manifest.json` written next to every stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    /// Hash of the manifest of the stage this one consumed, if any.
    #[serde(default)]
    pub input_hash: Option<String>,
    #[serde(default)]
    pub files: Vec<String>,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl Manifest {
    pub fn new(stage: &str, config_hash: String) -> Self {
        Manifest { stage: stage.into(), config_hash, input_hash: None, files: Vec::new(), details: serde_json::Value::Null }
    }

    pub fn write(&self, dir: &Path) -> Result<(), ArtifactError> {
        write_json(&dir.join("manifest.json"), self)
    }

    pub fn read(dir: &Path) -> Result<Self, ArtifactError> {
        read_json(&dir.join("manifest.json"))
    }

    /// Checks the stored config hash, unless `force` is set.
    pub fn expect_hash(&self, dir: &Path, expected: &str, force: bool) -> Result<(), ArtifactError> {
        if self.config_hash != expected && !force {
            return Err(ArtifactError::HashMismatch {
                path: dir.join("manifest.json").display().to_string(),
                expected: expected.to_string(),
                found: self.config_hash.clone(),
            });
        }
        if self.config_hash != expected {
            log::warn!("{}: config hash {} differs from {expected}; continuing (--force)", dir.display(), self.config_hash);
        }
        Ok(())
    }
}
