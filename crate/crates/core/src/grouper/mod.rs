//! Per-criterion cluster discovery at three granularities and image
//! assignment, from criterion captions, VQA answers or tagger scores.

pub mod caption;
pub mod tags;
pub mod vqa;

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::exec::ItemFailure;
use crate::proposer::ProposerError;
use crate::types::{is_sentinel, name_key, CandidateHierarchy, CaptionRecord, Substructure, TypeError};

pub use caption::{
    build_granularity_hierarchy, final_assignment, flat_candidates, generate_criterion_captions, group_by_captions,
    initial_naming, NameSnapper,
};
pub use tags::{build_tag_hierarchy, group_by_tags};
pub use vqa::{group_by_vqa, vqa_question_for_criterion};

/// Variant of the caption-based grouper.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    /// Initial names, three-level hierarchy, per-level assignment.
    #[default]
    Multi,
    /// Distinct initial names used directly as clusters.
    Initial,
    /// One consolidated flat list, one assignment.
    Flat,
}

impl GroupingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupingMode::Multi => "multi",
            GroupingMode::Initial => "initial",
            GroupingMode::Flat => "flat",
        }
    }
}

impl FromStr for GroupingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multi" => Ok(GroupingMode::Multi),
            "initial" => Ok(GroupingMode::Initial),
            "flat" => Ok(GroupingMode::Flat),
            other => Err(format!("unknown grouping mode `{other}` (multi, initial, flat)")),
        }
    }
}

/// Which grouper produces the substructures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrouperKind {
    #[default]
    Caption,
    Vqa,
    Tag,
}

impl GrouperKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GrouperKind::Caption => "caption",
            GrouperKind::Vqa => "vqa",
            GrouperKind::Tag => "tag",
        }
    }
}

impl FromStr for GrouperKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "caption" | "captions" => Ok(GrouperKind::Caption),
            "vqa" | "image" => Ok(GrouperKind::Vqa),
            "tag" | "tags" => Ok(GrouperKind::Tag),
            other => Err(format!("unknown grouper `{other}` (caption, vqa, tag)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrouperError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("criterion captions: {0}")]
    Captions(#[from] ProposerError),
    #[error("criterion `{criterion}`: hierarchy could not be built: {message}")]
    Hierarchy { criterion: String, message: String },
    #[error("criterion `{0}`: no usable VQA question")]
    VqaUnavailable(String),
    #[error("criterion `{0}`: no tag candidates")]
    NoTagCandidates(String),
    #[error("criterion `{0}` has an empty name")]
    EmptyCriterion(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

impl GrouperError {
    /// Errors confined to one criterion; the run continues with the others.
    pub fn is_per_criterion(&self) -> bool {
        match self {
            GrouperError::Hierarchy { .. } | GrouperError::VqaUnavailable(_) | GrouperError::NoTagCandidates(_) => true,
            GrouperError::Captions(ProposerError::TooManyFailures { .. }) => true,
            GrouperError::Backend(e) => !e.is_fatal(),
            _ => false,
        }
    }
}

/// Free-form name per image for one criterion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitialNameSet {
    pub criterion_id: String,
    pub names: BTreeMap<String, String>,
}

impl InitialNameSet {
    /// Distinct non-sentinel names, first spelling per case-insensitive key,
    /// sorted by key.
    pub fn distinct(&self) -> Vec<String> {
        let mut seen: BTreeMap<String, String> = BTreeMap::new();
        for n in self.names.values().filter(|n| !is_sentinel(n)) {
            seen.entry(name_key(n)).or_insert_with(|| n.clone());
        }
        seen.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaQuestion {
    pub criterion_id: String,
    pub question: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagHierarchy {
    pub criterion_id: String,
    pub mid: Vec<String>,
    /// Up to three coarse tags per mid tag.
    pub super_of: BTreeMap<String, Vec<String>>,
    /// Up to ten fine tags per mid tag.
    pub sub_of: BTreeMap<String, Vec<String>>,
}

impl TagHierarchy {
    pub fn coarse_candidates(&self) -> Vec<String> {
        union_in_mid_order(&self.mid, &self.super_of)
    }

    pub fn fine_candidates(&self) -> Vec<String> {
        union_in_mid_order(&self.mid, &self.sub_of)
    }
}

fn union_in_mid_order(mid: &[String], map: &BTreeMap<String, Vec<String>>) -> Vec<String> {
    crate::parse::dedup_names(mid.iter().filter_map(|m| map.get(m)).flatten().cloned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupOptions {
    pub mode: GroupingMode,
    /// Minimum cosine for snapping an off-list answer to a candidate.
    pub snap_floor: f64,
    /// Word cap for initial names.
    pub max_name_words: usize,
    pub caption_max_tokens: u32,
    pub name_max_tokens: u32,
    pub hierarchy_max_tokens: u32,
    pub assign_max_tokens: u32,
    pub hierarchy_retries: u32,
    pub workers: usize,
    pub failure_threshold: f64,
    /// Replaces the criterion-caption prompt; `{CRITERION}` is substituted.
    pub caption_prompt: Option<String>,
    /// Number of mid-tag sampling calls.
    pub tag_samples: u32,
    pub seed: u64,
}

impl Default for GroupOptions {
    fn default() -> Self {
        Self {
            mode: GroupingMode::Multi,
            snap_floor: 0.5,
            max_name_words: 5,
            caption_max_tokens: 512,
            name_max_tokens: 64,
            hierarchy_max_tokens: 2048,
            assign_max_tokens: 64,
            hierarchy_retries: 2,
            workers: 4,
            failure_threshold: 0.05,
            caption_prompt: None,
            tag_samples: 10,
            seed: 0,
        }
    }
}

/// Everything one grouper produced for one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingOutcome {
    pub criterion_id: String,
    /// Coarse, mid, fine; modes with a single level produce only mid.
    pub substructures: Vec<Substructure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<CaptionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialNameSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<CandidateHierarchy>,
    /// Candidate list of the flat mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat_candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<VqaQuestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag_hierarchy: Option<TagHierarchy>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub failures: Vec<ItemFailure>,
}

impl GroupingOutcome {
    pub(crate) fn new(criterion_id: &str) -> Self {
        Self {
            criterion_id: criterion_id.to_string(),
            substructures: Vec::new(),
            captions: Vec::new(),
            initial: None,
            hierarchy: None,
            flat_candidates: None,
            question: None,
            tag_hierarchy: None,
            warnings: Vec::new(),
            failures: Vec::new(),
        }
    }
}
