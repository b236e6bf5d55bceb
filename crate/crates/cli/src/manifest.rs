//! Run manifests: the effective configuration hash, seed, software version,
//! and input digests that make a run replayable. The run id embedded in
//! every output file is derived from these (timestamps excluded), so a
//! rerun with the same inputs produces byte-identical result files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::FileConfig;
use crate::error::{AppError, AppResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> AppResult<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub created_utc: String,
    pub command: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn build(config: &FileConfig, command: &str, inputs: &[PathBuf]) -> AppResult<Self> {
        let config_hash = sha256_hex(config.result_identity_toml()?.as_bytes());
        let inputs: Vec<InputDigest> = inputs
            .iter()
            .map(|path| {
                Ok(InputDigest {
                    path: path.display().to_string(),
                    sha256: file_digest(path)?,
                })
            })
            .collect::<AppResult<_>>()?;
        let version = env!("CARGO_PKG_VERSION").to_string();
        let mut id_material = format!("{config_hash}:{}:{version}", config.seed);
        for input in &inputs {
            id_material.push(':');
            id_material.push_str(&input.sha256);
        }
        let run_id = sha256_hex(id_material.as_bytes())[..16].to_string();
        Ok(RunManifest {
            run_id,
            config_hash,
            seed: config.seed,
            version,
            created_utc: chrono::Utc::now().to_rfc3339(),
            command: command.to_string(),
            inputs,
            outputs: Vec::new(),
        })
    }

    /// Re-hash the recorded inputs and compare with the stored digests.
    #[cfg_attr(not(test), allow(dead_code))]
    pub fn verify_inputs(&self) -> AppResult<()> {
        for input in &self.inputs {
            let fresh = file_digest(Path::new(&input.path))?;
            if fresh != input.sha256 {
                return Err(AppError::data(format!(
                    "digest mismatch for {}: recorded {}, recomputed {fresh}",
                    input.path, input.sha256
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> AppResult<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| AppError::Numeric(format!("manifest serialization: {e}")))?;
        std::fs::write(&path, text)
            .map_err(|e| AppError::Numeric(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
