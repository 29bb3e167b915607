use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const RUN_MANIFEST_FILE: &str = "manifest.json";

/// Record of one command invocation, written into its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, exactly as given.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub dataset_dir: Option<String>,
    pub seed: u64,
    /// Artifact file names (relative to the run directory) with CRC-32.
    pub artifacts: BTreeMap<String, u32>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>, config: serde_json::Value, seed: u64) -> Self {
        Self {
            command: command.to_owned(),
            argv,
            config,
            dataset_dir: None,
            seed,
            artifacts: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    /// Checksums `names` inside `dir` and writes the manifest there.
    pub fn finish(mut self, dir: &Path, names: &[String]) -> Result<Self> {
        for name in names {
            let bytes = std::fs::read(dir.join(name))?;
            self.artifacts.insert(name.clone(), crc32fast::hash(&bytes));
        }
        self.finished_unix = unix_now();
        std::fs::write(dir.join(RUN_MANIFEST_FILE), serde_json::to_vec_pretty(&self)?)?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
