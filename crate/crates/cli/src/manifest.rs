//! Append-only record of completed stages in a run directory.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    /// Wall-clock duration of the stage.
    pub seconds: f64,
    /// Files written by the stage, relative to the run directory.
    pub artifacts: Vec<String>,
    pub summary: serde_json::Value,
}

/// One JSON line per completed stage, never rewritten.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub dir: PathBuf,
    pub config_hash: String,
    pub records: Vec<StageRecord>,
}

impl RunManifest {
    /// Reads the manifest of `dir`, refusing records written under another
    /// config.
    pub fn open(dir: &Path, config_hash: &str) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let mut records = Vec::new();
        if path.exists() {
            for (i, line) in std::fs::read_to_string(&path)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: StageRecord = serde_json::from_str(line)
                    .map_err(|e| Error::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
                if r.config_hash != config_hash {
                    return Err(usage(format!(
                        "{} was produced by config {} but this run uses {config_hash}",
                        dir.display(),
                        r.config_hash
                    )));
                }
                records.push(r);
            }
        }
        Ok(Self { dir: dir.to_path_buf(), config_hash: config_hash.to_string(), records })
    }

    pub fn completed(&self, stage: &str) -> Option<&StageRecord> {
        self.records.iter().find(|r| r.stage == stage)
    }

    pub fn append(&mut self, record: StageRecord) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let mut f = OpenOptions::new().create(true).append(true).open(self.dir.join(MANIFEST_FILE))?;
        let mut line = serde_json::to_string(&record).map_err(|e| Error::Runtime(e.to_string()))?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        self.records.push(record);
        Ok(())
    }

    /// Listed artifacts that are not on disk.
    pub fn missing_artifacts(&self) -> Vec<String> {
        self.records
            .iter()
            .flat_map(|r| r.artifacts.iter())
            .filter(|a| !self.dir.join(a).exists())
            .cloned()
            .collect()
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }
}
