//! Domain types shared by every pipeline stage and the evaluation suite.
//!
//! All types are plain immutable values (`Clone + Send + Sync`) with serde
//! support so that every stage boundary can be persisted and replayed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cluster name used when a model response cannot be mapped onto any candidate.
pub const UNASSIGNED: &str = "unassigned";

/// Case-insensitive, whitespace-trimmed comparison key for names.
pub fn name_key(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Whether two names are equal under the case-insensitive trimmed rule.
pub fn names_equal(a: &str, b: &str) -> bool {
    name_key(a) == name_key(b)
}

pub fn is_sentinel(name: &str) -> bool {
    names_equal(name, UNASSIGNED)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("empty collection")]
    EmptyCollection,
    #[error("duplicate image id `{0}`")]
    DuplicateImageId(String),
    #[error("image `{0}` has negative or non-finite popularity")]
    InvalidPopularity(String),
    #[error("criterion name is empty")]
    EmptyCriterionName,
    #[error("caption for image `{0}` is empty")]
    EmptyCaption(String),
    #[error("caption kind and criterion id disagree for image `{0}`")]
    CaptionKindMismatch(String),
    #[error("granularity level `{0}` has no names")]
    EmptyLevel(Granularity),
    #[error("duplicate name `{name}` at level `{level}`")]
    DuplicateName { level: Granularity, name: String },
    #[error("unknown granularity `{0}`")]
    UnknownGranularity(String),
    #[error("assigned cluster `{0}` is not a known cluster name")]
    UnknownCluster(String),
    #[error("distribution has no mass")]
    EmptyDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// File path or URI handed to the vision backends.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub popularity: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            source: source.into(),
            popularity: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_popularity(mut self, popularity: f64) -> Self {
        self.popularity = Some(popularity);
        self
    }
}

/// A validated, non-empty collection with unique image ids, in input order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Collection {
    records: Vec<ImageRecord>,
}

impl Collection {
    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.image_id.as_str())
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn into_records(self) -> Vec<ImageRecord> {
        self.records
    }
}

/// Checks collection invariants and returns the records in their input order.
pub fn validate_collection(records: Vec<ImageRecord>) -> Result<Collection, TypeError> {
    if records.is_empty() {
        return Err(TypeError::EmptyCollection);
    }
    let mut seen = std::collections::HashSet::with_capacity(records.len());
    for record in &records {
        if !seen.insert(record.image_id.as_str()) {
            return Err(TypeError::DuplicateImageId(record.image_id.clone()));
        }
        if let Some(p) = record.popularity {
            if !p.is_finite() || p < 0.0 {
                return Err(TypeError::InvalidPopularity(record.image_id.clone()));
            }
        }
    }
    Ok(Collection { records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    CaptionProposer,
    TagProposer,
    ImageProposer,
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionStatus {
    Raw,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub criterion_id: String,
    pub name: String,
    pub provenance: Provenance,
    pub status: CriterionStatus,
    #[serde(default)]
    pub merged_from: Vec<String>,
}

impl Criterion {
    pub fn new(
        criterion_id: impl Into<String>,
        name: impl Into<String>,
        provenance: Provenance,
        status: CriterionStatus,
    ) -> Result<Self, TypeError> {
        let name = name.into().trim().to_string();
        if name.is_empty() {
            return Err(TypeError::EmptyCriterionName);
        }
        Ok(Self {
            criterion_id: criterion_id.into(),
            name,
            provenance,
            status,
            merged_from: Vec::new(),
        })
    }

    /// A refined, user-supplied criterion whose lineage is itself.
    pub fn user_supplied(name: &str) -> Result<Self, TypeError> {
        let id = slugify(name);
        let mut c = Self::new(id.clone(), name, Provenance::UserSupplied, CriterionStatus::Refined)?;
        c.merged_from = vec![id];
        Ok(c)
    }
}

/// Lowercase ascii slug usable as a file name and identifier.
pub fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut dash = false;
    for ch in name.trim().chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("criterion");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionKind {
    Generic,
    CriterionSpecific,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub text: String,
    pub kind: CaptionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion_id: Option<String>,
}

impl CaptionRecord {
    pub fn generic(image_id: impl Into<String>, text: impl Into<String>) -> Result<Self, TypeError> {
        Self::build(image_id.into(), text.into(), CaptionKind::Generic, None)
    }

    pub fn for_criterion(
        image_id: impl Into<String>,
        text: impl Into<String>,
        criterion_id: impl Into<String>,
    ) -> Result<Self, TypeError> {
        Self::build(
            image_id.into(),
            text.into(),
            CaptionKind::CriterionSpecific,
            Some(criterion_id.into()),
        )
    }

    fn build(
        image_id: String,
        text: String,
        kind: CaptionKind,
        criterion_id: Option<String>,
    ) -> Result<Self, TypeError> {
        if text.trim().is_empty() {
            return Err(TypeError::EmptyCaption(image_id));
        }
        if (kind == CaptionKind::CriterionSpecific) != criterion_id.is_some() {
            return Err(TypeError::CaptionKindMismatch(image_id));
        }
        Ok(Self { image_id, text, kind, criterion_id })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTag {
    pub tag: String,
    pub score: f64,
}

/// Tags for one image, sorted by score descending (ties lexicographic).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub image_id: String,
    pub tags: Vec<ScoredTag>,
}

impl TagRecord {
    /// Sorts and deduplicates the given tags, keeping the highest score per tag.
    pub fn new(image_id: impl Into<String>, mut tags: Vec<ScoredTag>) -> Self {
        tags.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.tag.cmp(&b.tag))
        });
        let mut seen = std::collections::HashSet::new();
        tags.retain(|t| seen.insert(name_key(&t.tag)));
        Self { image_id: image_id.into(), tags }
    }

    pub fn top(&self) -> Option<&ScoredTag> {
        self.tags.first()
    }

    /// True when the best score is shared by more than one tag.
    pub fn top_is_tied(&self) -> bool {
        match (self.tags.first(), self.tags.get(1)) {
            (Some(a), Some(b)) => a.score == b.score,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Coarse,
    Mid,
    Fine,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Coarse, Granularity::Mid, Granularity::Fine];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Coarse => "coarse",
            Granularity::Mid => "mid",
            Granularity::Fine => "fine",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = TypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match name_key(s).as_str() {
            "coarse" => Ok(Granularity::Coarse),
            "mid" | "middle" => Ok(Granularity::Mid),
            "fine" => Ok(Granularity::Fine),
            _ => Err(TypeError::UnknownGranularity(s.to_string())),
        }
    }
}

/// Cluster-name candidates for one criterion at each granularity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateHierarchy {
    pub criterion_id: String,
    pub coarse: Vec<String>,
    pub mid: Vec<String>,
    pub fine: Vec<String>,
}

impl CandidateHierarchy {
    pub fn new(
        criterion_id: impl Into<String>,
        coarse: Vec<String>,
        mid: Vec<String>,
        fine: Vec<String>,
    ) -> Result<Self, TypeError> {
        let h = Self { criterion_id: criterion_id.into(), coarse, mid, fine };
        for level in Granularity::ALL {
            let names = h.level(level);
            if names.is_empty() {
                return Err(TypeError::EmptyLevel(level));
            }
            let mut seen = std::collections::HashSet::new();
            for n in names {
                if !seen.insert(name_key(n)) {
                    return Err(TypeError::DuplicateName { level, name: n.clone() });
                }
            }
        }
        Ok(h)
    }

    pub fn level(&self, level: Granularity) -> &[String] {
        match level {
            Granularity::Coarse => &self.coarse,
            Granularity::Mid => &self.mid,
            Granularity::Fine => &self.fine,
        }
    }
}

/// Assignment of every image to a named cluster for one criterion and granularity.
///
/// `cluster_names` lists the non-sentinel clusters that received at least one
/// image, so `K_l == cluster_names.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substructure {
    pub criterion_id: String,
    pub granularity: Granularity,
    pub assignments: BTreeMap<String, String>,
    pub cluster_names: Vec<String>,
}

impl Substructure {
    /// Builds a substructure from per-image names in collection order.
    ///
    /// Names are canonicalized to the first-seen spelling of each
    /// case-insensitive key; sentinel names become [`UNASSIGNED`].
    pub fn from_assignments<'a, I>(criterion_id: &str, granularity: Granularity, items: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut canonical: BTreeMap<String, String> = BTreeMap::new();
        let mut cluster_names = Vec::new();
        let mut assignments = BTreeMap::new();
        for (image_id, name) in items {
            let name = name.trim();
            let assigned = if name.is_empty() || is_sentinel(name) {
                UNASSIGNED.to_string()
            } else {
                canonical
                    .entry(name_key(name))
                    .or_insert_with(|| {
                        cluster_names.push(name.to_string());
                        name.to_string()
                    })
                    .clone()
            };
            assignments.insert(image_id.to_string(), assigned);
        }
        Self {
            criterion_id: criterion_id.to_string(),
            granularity,
            assignments,
            cluster_names,
        }
    }

    pub fn k(&self) -> usize {
        self.cluster_names.len()
    }

    pub fn unassigned_count(&self) -> usize {
        self.assignments.values().filter(|n| is_sentinel(n)).count()
    }

    /// Checks that every assigned name is a known cluster or the sentinel.
    pub fn validate(&self) -> Result<(), TypeError> {
        let keys: std::collections::HashSet<String> =
            self.cluster_names.iter().map(|n| name_key(n)).collect();
        for name in self.assignments.values() {
            if !is_sentinel(name) && !keys.contains(&name_key(name)) {
                return Err(TypeError::UnknownCluster(name.clone()));
            }
        }
        Ok(())
    }

    pub fn distribution(&self, include_sentinel: bool) -> Result<Distribution, TypeError> {
        let mut counts: BTreeMap<String, u64> =
            self.cluster_names.iter().map(|n| (n.clone(), 0)).collect();
        for name in self.assignments.values() {
            if is_sentinel(name) {
                if include_sentinel {
                    *counts.entry(UNASSIGNED.to_string()).or_default() += 1;
                }
            } else {
                *counts.entry(name.clone()).or_default() += 1;
            }
        }
        Distribution::from_counts(&self.criterion_id, self.granularity, counts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub criterion_id: String,
    pub granularity: Granularity,
    pub counts: BTreeMap<String, u64>,
    pub probabilities: BTreeMap<String, f64>,
}

impl Distribution {
    pub fn from_counts(
        criterion_id: &str,
        granularity: Granularity,
        counts: BTreeMap<String, u64>,
    ) -> Result<Self, TypeError> {
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(TypeError::EmptyDistribution);
        }
        let probabilities = counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / total as f64))
            .collect();
        Ok(Self {
            criterion_id: criterion_id.to_string(),
            granularity,
            counts,
            probabilities,
        })
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScores {
    pub gt_criterion: String,
    pub cacc: f64,
    pub sacc: f64,
    pub hm: f64,
    pub chosen_granularity: Granularity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tpr: f64,
    /// `None` when fewer than two criteria were predicted.
    pub diversity: Option<f64>,
    pub per_criterion: BTreeMap<String, CriterionScores>,
    #[serde(default)]
    pub uncovered: Vec<String>,
    #[serde(default)]
    pub skipped: Vec<String>,
    pub matcher: String,
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Ground-truth criteria names and per-image labels.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub criteria: Vec<String>,
    #[serde(default)]
    pub labels: BTreeMap<String, BTreeMap<String, String>>,
}

impl GroundTruth {
    /// Per-image labels for a criterion, looked up case-insensitively.
    pub fn labels_for(&self, criterion: &str) -> Option<&BTreeMap<String, String>> {
        self.labels
            .iter()
            .find(|(k, _)| names_equal(k, criterion))
            .map(|(_, v)| v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_keeps_order() {
        let recs = vec![
            ImageRecord::new("c", "c.jpg"),
            ImageRecord::new("a", "a.jpg"),
            ImageRecord::new("b", "b.jpg"),
        ];
        let col = validate_collection(recs).unwrap();
        assert_eq!(col.len(), 3);
        assert_eq!(col.ids().collect::<Vec<_>>(), ["c", "a", "b"]);
    }

    #[test]
    fn validate_rejects_duplicates_and_empty() {
        let recs = vec![ImageRecord::new("a", "1.jpg"), ImageRecord::new("a", "2.jpg")];
        assert_eq!(
            validate_collection(recs),
            Err(TypeError::DuplicateImageId("a".into()))
        );
        assert_eq!(validate_collection(vec![]), Err(TypeError::EmptyCollection));
    }

    #[test]
    fn validate_rejects_negative_popularity() {
        let recs = vec![ImageRecord::new("a", "1.jpg").with_popularity(-1.0)];
        assert!(matches!(validate_collection(recs), Err(TypeError::InvalidPopularity(_))));
    }

    #[test]
    fn criterion_name_must_be_non_empty() {
        assert_eq!(
            Criterion::new("x", "   ", Provenance::UserSupplied, CriterionStatus::Raw),
            Err(TypeError::EmptyCriterionName)
        );
    }

    #[test]
    fn caption_kind_requires_criterion() {
        assert!(CaptionRecord::generic("a", "text").is_ok());
        assert!(CaptionRecord::generic("a", "  ").is_err());
        assert!(CaptionRecord::for_criterion("a", "text", "mood").is_ok());
    }

    #[test]
    fn granularity_order() {
        assert!(Granularity::Coarse < Granularity::Mid && Granularity::Mid < Granularity::Fine);
        assert_eq!("middle".parse::<Granularity>().unwrap(), Granularity::Mid);
    }

    #[test]
    fn hierarchy_rejects_case_duplicates() {
        let err = CandidateHierarchy::new(
            "c",
            vec!["A".into()],
            vec!["x".into(), " X ".into()],
            vec!["f".into()],
        )
        .unwrap_err();
        assert!(matches!(err, TypeError::DuplicateName { level: Granularity::Mid, .. }));
        assert!(CandidateHierarchy::new("c", vec![], vec!["a".into()], vec!["b".into()]).is_err());
    }

    #[test]
    fn substructure_canonicalizes_and_counts() {
        let s = Substructure::from_assignments(
            "mood",
            Granularity::Mid,
            [("1", "Happy"), ("2", "happy "), ("3", "Sad"), ("4", "UNASSIGNED")],
        );
        assert_eq!(s.cluster_names, ["Happy", "Sad"]);
        assert_eq!(s.k(), 2);
        assert_eq!(s.assignments["2"], "Happy");
        assert_eq!(s.assignments["4"], UNASSIGNED);
        assert_eq!(s.unassigned_count(), 1);
        s.validate().unwrap();

        let d = s.distribution(false).unwrap();
        assert_eq!(d.counts["Happy"], 2);
        assert!(!d.counts.contains_key(UNASSIGNED));
        let d = s.distribution(true).unwrap();
        assert_eq!(d.counts[UNASSIGNED], 1);
    }

    #[test]
    fn single_cluster_is_allowed() {
        let s = Substructure::from_assignments("c", Granularity::Fine, [("1", "X"), ("2", "X")]);
        assert_eq!(s.k(), 1);
    }

    #[test]
    fn tag_record_sorted_and_tie_flagged() {
        let r = TagRecord::new(
            "a",
            vec![
                ScoredTag { tag: "b".into(), score: 0.5 },
                ScoredTag { tag: "a".into(), score: 0.5 },
                ScoredTag { tag: "c".into(), score: 0.9 },
                ScoredTag { tag: "C".into(), score: 0.1 },
            ],
        );
        let names: Vec<_> = r.tags.iter().map(|t| t.tag.as_str()).collect();
        assert_eq!(names, ["c", "a", "b"]);
        assert!(!r.top_is_tied());
    }

    #[test]
    fn slugs() {
        assert_eq!(slugify("Time of Day"), "time-of-day");
        assert_eq!(slugify("  Setting/Theme "), "setting-theme");
        assert_eq!(slugify("!!"), "criterion");
    }
}
