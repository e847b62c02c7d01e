//! Run manifests: everything needed to reproduce a run bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Canonical `key = value` rendering of the effective config.
    pub config: String,
    /// sha256 of each input file.
    pub input_hashes: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Wall-clock milliseconds per phase.
    pub timings_ms: BTreeMap<String, u128>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: String) -> Self {
        Self {
            command: command.to_string(),
            seed,
            config,
            input_hashes: BTreeMap::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
        }
    }

    pub fn hash_input(&mut self, path: &Path) -> anyhow::Result<()> {
        let bytes = std::fs::read(path)
            .map_err(|e| anyhow::anyhow!("cannot hash input {}: {e}", path.display()))?;
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        self.input_hashes
            .insert(path.display().to_string(), format!("{:x}", hasher.finalize()));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write atomically: temp file in the same directory, then rename.
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, &json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Accumulates named phase timings.
pub struct PhaseTimer {
    started: Instant,
    pub timings: BTreeMap<String, u128>,
}

impl PhaseTimer {
    pub fn new() -> Self {
        Self {
            started: Instant::now(),
            timings: BTreeMap::new(),
        }
    }

    pub fn lap(&mut self, phase: &str) {
        self.timings
            .insert(phase.to_string(), self.started.elapsed().as_millis());
        self.started = Instant::now();
    }
}

/// Atomic file write used for every CLI output.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let tmp = tmp_path(path);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}
