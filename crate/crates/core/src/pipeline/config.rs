//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::backends::config::BackendsConfig;
use crate::grouper::{GrouperKind, GroupingMode};
use crate::proposer::ProposerKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposerConfig {
    pub kind: ProposerKind,
    pub subset_size: usize,
    pub criteria_per_subset: usize,
    pub grid_side: usize,
    pub tile_size: u32,
    pub criteria_per_grid: usize,
    /// Tags kept per image for the tag proposer.
    pub tag_k: usize,
    pub token_budget: usize,
    /// Fraction of the collection used for discovery.
    pub sample_fraction: f64,
    pub caption_max_tokens: u32,
    pub propose_max_tokens: u32,
    pub refine_max_tokens: u32,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        Self {
            kind: ProposerKind::Caption,
            subset_size: 400,
            criteria_per_subset: 10,
            grid_side: 8,
            tile_size: 256,
            criteria_per_grid: 5,
            tag_k: 10,
            token_budget: 115_000,
            sample_fraction: 1.0,
            caption_max_tokens: 512,
            propose_max_tokens: 1024,
            refine_max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrouperConfig {
    pub kind: GrouperKind,
    pub mode: GroupingMode,
    pub caption_max_tokens: u32,
    pub name_max_tokens: u32,
    pub hierarchy_max_tokens: u32,
    pub assign_max_tokens: u32,
    pub hierarchy_retries: u32,
    pub max_name_words: usize,
    pub tag_samples: u32,
    /// Replaces the criterion-caption prompt; `{CRITERION}` is substituted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption_prompt: Option<String>,
}

impl Default for GrouperConfig {
    fn default() -> Self {
        Self {
            kind: GrouperKind::Caption,
            mode: GroupingMode::Multi,
            caption_max_tokens: 512,
            name_max_tokens: 64,
            hierarchy_max_tokens: 2048,
            assign_max_tokens: 64,
            hierarchy_retries: 2,
            max_name_words: 5,
            tag_samples: 10,
            caption_prompt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub tpr_match: f64,
    /// Off-list answers snap to a candidate at or above this cosine.
    pub snap_floor: f64,
    /// Raw criteria below this cosine to every refined one are discarded.
    pub lineage_floor: f64,
    /// Largest tolerated fraction of failed items per batch.
    pub failure_fraction: f64,
    /// Largest tolerated fraction of images without popularity.
    pub popularity_missing: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { tpr_match: 0.7, snap_floor: 0.5, lineage_floor: 0.5, failure_fraction: 0.05, popularity_missing: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherKind {
    #[default]
    Embedding,
    LlmJudge,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Count `unassigned` as a cluster in bias and correlation.
    pub include_sentinel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Line-delimited image manifest.
    pub collection: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Tag vocabulary (tag proposer).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<PathBuf>,
    /// Criteria to group by instead of discovering them.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub criteria: Vec<String>,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub seed: u64,
    /// Worker threads per stage; also caps requests in flight per backend
    /// when `max_in_flight` is unset.
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_in_flight: Option<usize>,
    pub proposer: ProposerConfig,
    pub grouper: GrouperConfig,
    pub thresholds: Thresholds,
    pub matcher: MatcherKind,
    pub analysis: AnalysisConfig,
    pub backends: BackendsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            collection: PathBuf::from("collection.jsonl"),
            ground_truth: None,
            vocabulary: None,
            criteria: Vec::new(),
            output_dir: PathBuf::from("runs"),
            run_id: None,
            seed: 0,
            workers: 4,
            max_in_flight: None,
            proposer: ProposerConfig::default(),
            grouper: GrouperConfig::default(),
            thresholds: Thresholds::default(),
            matcher: MatcherKind::Embedding,
            analysis: AnalysisConfig::default(),
            backends: BackendsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let t = &self.thresholds;
        for (name, v) in [
            ("thresholds.tpr_match", t.tpr_match),
            ("thresholds.snap_floor", t.snap_floor),
            ("thresholds.lineage_floor", t.lineage_floor),
            ("thresholds.failure_fraction", t.failure_fraction),
            ("thresholds.popularity_missing", t.popularity_missing),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must be in [0, 1], got {v}"));
            }
        }
        let p = &self.proposer;
        if !(p.sample_fraction > 0.0 && p.sample_fraction <= 1.0) {
            return bad("proposer.sample_fraction must be in (0, 1]");
        }
        if p.subset_size == 0 || p.grid_side == 0 || p.tile_size == 0 || p.tag_k == 0 || p.token_budget == 0 {
            return bad("proposer sizes must be positive");
        }
        if self.workers == 0 || self.max_in_flight == Some(0) {
            return bad("workers and max_in_flight must be positive");
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
                return bad("run_id must be a plain directory name");
            }
        }
        Ok(())
    }

    /// Effective worker count.
    pub fn parallelism(&self) -> usize {
        self.max_in_flight.unwrap_or(self.workers).max(1)
    }

    /// SHA-256 over the canonical form of every setting that can change an
    /// artifact. Output location, run id and parallelism are excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.run_id = None;
        c.workers = 1;
        c.max_in_flight = None;
        c.backends.set_max_in_flight(1);
        c.backends.cache_dir = None;
        let canonical = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}
