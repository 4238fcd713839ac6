//! Experiment config files (TOML) and their content hash.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::osse::ExperimentConfig;

pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml_string(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

pub fn load(path: &Path) -> Result<ExperimentConfig> {
    from_toml_str(&std::fs::read_to_string(path)?)
}

/// Hex SHA-256 of the canonical serialization; equal configs hash equal
/// regardless of how the source file was formatted.
pub fn content_hash(cfg: &ExperimentConfig) -> Result<String> {
    let digest = Sha256::digest(to_toml_string(cfg)?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
