//! Stage orchestration with persisted, digested artifacts and a run manifest.
//!
//! A run lives in `<output>/<run_id>/`: `manifest.json`, one directory per
//! stage and, unless configured elsewhere, the response cache. Each stage
//! reads its inputs from earlier stages' files, never from memory.

pub mod config;
pub mod manifest;
pub mod replay;
pub mod report;
pub mod stages;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::backends::BackendError;
use crate::dataset::DatasetError;
use crate::grouper::GrouperError;
use crate::metrics::MetricError;
use crate::proposer::ProposerError;

pub use config::{MatcherKind, PipelineConfig};
pub use manifest::{RunManifest, StageCommand, StageRecord};
pub use replay::{replay_run, ReplayReport};
pub use stages::{AnalysisKind, GroupIndex, Run};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Proposer(#[from] ProposerError),
    #[error(transparent)]
    Grouper(#[from] GrouperError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("missing artifact {0}; run the producing stage first")]
    MissingArtifact(PathBuf),
    #[error("{path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("run directory {0} is locked by another process (remove the .lock file if stale)")]
    Locked(PathBuf),
    #[error("{stage} finished with {count} failed criteria: {names}")]
    PartialFailure { stage: &'static str, count: usize, names: String },
    #[error("replay diverged: {0}")]
    ReplayMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Dataset(_) => 2,
            PipelineError::Backend(BackendError::NotConfigured(_)) => 2,
            PipelineError::Backend(BackendError::InvalidRequest(m)) if m.contains("backend needs") => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Writes `bytes` through a temporary file and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| PipelineError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("artifact serializes"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact { path: path.to_path_buf(), message: e.to_string() })
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Artifact {
                path: path.to_path_buf(),
                message: format!("record {}: {e}", i + 1),
            })
        })
        .collect()
}

/// Exclusive ownership of a run directory for the life of the value.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(run_dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
        let path = run_dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(run_dir.to_path_buf())),
            Err(e) => Err(PipelineError::Io { path, source: e }),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
