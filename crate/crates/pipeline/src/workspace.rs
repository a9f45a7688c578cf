//! Workspace layout, per-stage records and the single-writer lock.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use quanv::textfmt::{read_to_string, sha256_file, verify_file, write_file};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const GENERATE: &str = "generate";
pub const EXTRACT: &str = "extract";
pub const TRAIN: &str = "train";

pub fn learn_stage(level: usize) -> String {
    format!("learn-filters --level {level}")
}

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("data/dataset.txt")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("data/split.txt")
    }

    pub fn bank_dir(&self, level: usize) -> PathBuf {
        self.root.join(format!("banks/level_{level}"))
    }

    pub fn features(&self, part: &str) -> PathBuf {
        self.root.join(format!("features/{part}.txt"))
    }

    pub fn normalizer(&self) -> PathBuf {
        self.root.join("features/normalizer.json")
    }

    pub fn scales(&self) -> PathBuf {
        self.root.join("features/scales.json")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model/checkpoint.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("model/metrics.csv")
    }

    pub fn run_manifest(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.root.join(format!("stages/{key}.json"))
    }

    /// Path relative to the workspace root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn read_record(&self, key: &str) -> Result<Option<StageRecord>> {
        let path = self.record_path(key);
        if !path.exists() {
            return Ok(None);
        }
        let text = read_to_string(&path)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| quanv::Error::Parse { path, msg: e.to_string() }.into())
    }

    /// Record for a finished stage, or a missing-prerequisite error.
    pub fn require_record(&self, key: &str, stage: &str) -> Result<StageRecord> {
        self.read_record(key)?
            .ok_or_else(|| PipelineError::missing(stage, self.record_path(key)))
    }

    pub fn write_record(&self, key: &str, cache_key: &str, outputs: &[PathBuf]) -> Result<StageRecord> {
        let outputs = outputs
            .iter()
            .map(|p| {
                Ok(Artifact {
                    path: self.relative(p),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let record = StageRecord {
            cache_key: cache_key.to_string(),
            outputs,
        };
        let mut text = serde_json::to_string_pretty(&record).expect("record serializes");
        text.push('\n');
        write_file(&self.record_path(key), text)?;
        Ok(record)
    }

    /// Checks a stage's outputs against its record; `stage` names the command
    /// that produces them.
    pub fn verify_outputs(&self, record: &StageRecord, stage: &str) -> Result<()> {
        for a in &record.outputs {
            let path = self.root.join(&a.path);
            if !path.exists() {
                return Err(PipelineError::missing(stage, path));
            }
            verify_file(&path, &a.sha256)?;
        }
        Ok(())
    }

    /// Takes the workspace lock until the guard drops.
    pub fn lock(&self) -> Result<WorkspaceLock> {
        std::fs::create_dir_all(&self.root).map_err(|e| quanv::Error::Io {
            path: self.root.clone(),
            source: e,
        })?;
        let path = self.root.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkspaceLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(self.root.clone())),
            Err(e) => Err(quanv::Error::Io { path, source: e }.into()),
        }
    }
}

#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// What a finished stage was computed from and what it wrote.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub cache_key: String,
    pub outputs: Vec<Artifact>,
}

impl StageRecord {
    pub fn sha_of(&self, rel: &str) -> Option<&str> {
        self.outputs.iter().find(|a| a.path == rel).map(|a| a.sha256.as_str())
    }
}
