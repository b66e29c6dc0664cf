//! The reproducibility manifest of a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{file_digest, read_json, write_json, PipelineError};
use crate::backends::{BackendIdentity, CallCounts, Capability};

pub const MANIFEST_FILE: &str = "manifest.json";

/// A stage invocation with the arguments needed to repeat it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum StageCommand {
    Caption,
    Propose,
    Group {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        criteria: Option<Vec<String>>,
    },
    Evaluate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ground_truth: Option<PathBuf>,
    },
    Analyze {
        kind: super::AnalysisKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        labels: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pair: Option<(String, String)>,
    },
    Report,
}

impl StageCommand {
    pub fn name(&self) -> &'static str {
        match self {
            StageCommand::Caption => "caption",
            StageCommand::Propose => "propose",
            StageCommand::Group { .. } => "group",
            StageCommand::Evaluate { .. } => "evaluate",
            StageCommand::Analyze { .. } => "analyze",
            StageCommand::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub command: StageCommand,
    pub started: String,
    pub finished: String,
    /// Artifact path (relative to the run directory) → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Transport calls made (cache hits excluded).
    pub calls: CallCounts,
    #[serde(default)]
    pub warnings: Vec<String>,
    /// Items that failed without failing the stage.
    #[serde(default)]
    pub item_failures: usize,
    /// Per-criterion errors.
    #[serde(default)]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub shuffle: u64,
    pub sample: u64,
    pub tag_sampling: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_digest: String,
    pub seeds: Seeds,
    pub backends: BTreeMap<Capability, BackendIdentity>,
    /// Response cache used by the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub offline: bool,
    pub created: String,
    pub updated: String,
    pub stages: Vec<StageRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, PipelineError> {
        read_json(&run_dir.join(MANIFEST_FILE))
    }

    pub fn save(&mut self, run_dir: &Path) -> Result<(), PipelineError> {
        self.updated = now();
        write_json(&run_dir.join(MANIFEST_FILE), self)
    }

    /// Replaces the record of an identical earlier invocation, else appends.
    pub fn record(&mut self, rec: StageRecord) {
        match self.stages.iter_mut().find(|s| s.command == rec.command) {
            Some(slot) => *slot = rec,
            None => self.stages.push(rec),
        }
    }

    /// Latest digest recorded for an artifact path.
    pub fn digest_of(&self, rel: &str) -> Option<&str> {
        self.stages.iter().rev().find_map(|s| s.outputs.get(rel).map(String::as_str))
    }
}

/// Digests of the given run-relative paths.
pub fn digests(run_dir: &Path, rels: &[String]) -> Result<BTreeMap<String, String>, PipelineError> {
    rels.iter().map(|r| Ok((r.clone(), file_digest(&run_dir.join(r))?))).collect()
}
