//! Run manifest: config snapshot, content hash, output checksums, timings.
//! Written atomically at run end; the only place wall-clock data may appear.

use crate::CliError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    /// filename -> sha256 of the file contents.
    pub outputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub wall_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Tracks a run in progress and writes `manifest.json` on completion.
pub struct ManifestBuilder {
    command: String,
    config_json: String,
    outputs: BTreeMap<String, String>,
    started_unix: u64,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config_json: String) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config_json,
            outputs: BTreeMap::new(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            started: Instant::now(),
        }
    }

    /// Record a checksum for a file that was written elsewhere.
    pub fn record_output(&mut self, name: &str, contents: &str) {
        self.outputs.insert(name.to_string(), sha256_hex(contents.as_bytes()));
    }

    /// Write an output file and record its checksum.
    pub fn write_output(&mut self, dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
        let path = dir.join(name);
        std::fs::write(&path, contents)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    /// Finish the run: write `manifest.json` atomically (temp file + rename).
    pub fn finish(self, dir: &Path) -> Result<RunManifest, CliError> {
        let config: serde_json::Value = serde_json::from_str(&self.config_json)
            .map_err(|e| CliError::config(format!("config snapshot: {e}")))?;
        let manifest = RunManifest {
            command: self.command,
            config_hash: sha256_hex(self.config_json.as_bytes()),
            config,
            outputs: self.outputs,
            started_unix: self.started_unix,
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::config(format!("manifest serialize: {e}")))?;
        let tmp = dir.join("manifest.json.tmp");
        let path = dir.join("manifest.json");
        std::fs::write(&tmp, text)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, &path)
            .map_err(|e| CliError::config(format!("cannot rename manifest: {e}")))?;
        Ok(manifest)
    }
}
