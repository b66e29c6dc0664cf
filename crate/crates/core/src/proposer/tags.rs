//! Image tagging against a vocabulary and tag-based criteria proposal.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::captions::propose_subsets;
use super::{accumulate_criteria, ProposerError, ProposerKind, ProposerRun};
use crate::backends::Backends;
use crate::exec::{par_map, ItemFailure};
use crate::prompts::{self, Prompt};
use crate::types::{Collection, TagRecord};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagBatch {
    /// One record per successful image, in collection order.
    pub records: Vec<TagRecord>,
    pub failures: Vec<ItemFailure>,
}

/// Top-`k` tags for every image. Failure handling follows
/// [`super::caption_images`].
pub fn tag_collection(
    backends: &Backends,
    collection: &Collection,
    vocabulary: &[String],
    k: usize,
    workers: usize,
    failure_threshold: f64,
) -> Result<TagBatch, ProposerError> {
    if vocabulary.is_empty() {
        return Err(ProposerError::EmptyInput("empty tag vocabulary"));
    }
    let k = k.clamp(1, vocabulary.len());
    let results = par_map(collection.records(), workers, |_, rec| backends.tag(&rec.image_id, &rec.source, vocabulary, k));
    let mut batch = TagBatch::default();
    for (rec, res) in collection.records().iter().zip(results) {
        match res {
            Ok(r) => batch.records.push(r),
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => batch.failures.push(ItemFailure::new(&rec.image_id, e)),
        }
    }
    let total = collection.len();
    let failed = batch.failures.len();
    if batch.records.is_empty() || failed as f64 > failure_threshold * total as f64 {
        return Err(ProposerError::TooManyFailures { failed, total, threshold: failure_threshold });
    }
    Ok(batch)
}

/// Splits `0..n` into the fewest near-equal contiguous ranges for which
/// `cost` stays within `budget`. Falls back to single items when even those
/// exceed it.
pub fn split_by_budget(n: usize, budget: usize, cost: impl Fn(Range<usize>) -> usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    for m in 1..=n {
        let ranges = even_ranges(n, m);
        if ranges.iter().all(|r| cost(r.clone()) <= budget) {
            return ranges;
        }
    }
    even_ranges(n, n)
}

fn even_ranges(n: usize, m: usize) -> Vec<Range<usize>> {
    let (base, extra) = (n / m, n % m);
    let mut start = 0;
    (0..m)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagProposeOptions {
    /// Estimated prompt tokens allowed per request.
    pub token_budget: usize,
    pub tags_per_image: usize,
    pub max_tokens: u32,
    pub workers: usize,
    pub seed: u64,
}

impl Default for TagProposeOptions {
    fn default() -> Self {
        Self { token_budget: 115_000, tags_per_image: 10, max_tokens: 1024, workers: 4, seed: 0 }
    }
}

/// Criteria from the tag lists of all images, in collection order, split
/// into as few requests as the token budget allows.
pub fn propose_from_tags(
    backends: &Backends,
    records: &[TagRecord],
    opts: &TagProposeOptions,
) -> Result<ProposerRun, ProposerError> {
    if records.is_empty() {
        return Err(ProposerError::EmptyInput("no tag records"));
    }
    let lists: Vec<Vec<String>> = records
        .iter()
        .map(|r| r.tags.iter().take(opts.tags_per_image).map(|t| t.tag.clone()).collect())
        .collect();
    let prompt_for = |r: Range<usize>| prompts::tag_criteria(&lists[r], opts.tags_per_image);
    let ranges = split_by_budget(lists.len(), opts.token_budget, |r| prompts::estimate_tokens(&prompt_for(r)));
    let prompts: Vec<Prompt> = ranges.iter().cloned().map(prompt_for).collect();
    let labels: Vec<String> = (0..ranges.len()).map(|i| format!("tag chunk {i}")).collect();
    let (subset_criteria, failures) = propose_subsets(backends, &prompts, &labels, opts.max_tokens, opts.workers)?;
    let raw = accumulate_criteria(
        subset_criteria.iter().flatten().map(String::as_str),
        ProposerKind::Tag.provenance(),
    )?;
    if raw.is_empty() {
        return Err(ProposerError::NoCriteria);
    }
    Ok(ProposerRun {
        kind: ProposerKind::Tag,
        shuffle_seed: opts.seed,
        subset_size: ranges.iter().map(|r| r.len()).max().unwrap_or(0),
        subsets: ranges.iter().map(|r| records[r.clone()].iter().map(|t| t.image_id.clone()).collect()).collect(),
        subset_criteria,
        raw_criteria: raw,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::scripted::{ChatRule, ScriptedChat, ScriptedTagger};
    use crate::backends::{BackendIdentity, BackendPolicy};
    use crate::types::{validate_collection, ImageRecord, ScoredTag};
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn id() -> BackendIdentity {
        BackendIdentity { kind: "scripted".into(), endpoint: String::new(), model_id: "m".into() }
    }

    #[test]
    fn budget_split_is_minimal_and_even() {
        assert_eq!(split_by_budget(10, 100, |r| r.len() * 10), vec![0..10]);
        assert_eq!(split_by_budget(10, 40, |r| r.len() * 10), vec![0..4, 4..7, 7..10]);
        assert_eq!(split_by_budget(3, 5, |r| r.len() * 10), vec![0..1, 1..2, 2..3]);
        assert!(split_by_budget(0, 5, |_| 0).is_empty());
    }

    #[test]
    fn tags_collection_and_proposes() {
        let scores: BTreeMap<String, f64> = [("dog", 0.9), ("park", 0.5), ("sky", 0.1)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let vocab: Vec<String> = scores.keys().cloned().collect();
        let col = validate_collection(vec![ImageRecord::new("a", "a.jpg"), ImageRecord::new("b", "b.jpg")]).unwrap();
        let chat = ScriptedChat::new(vec![ChatRule::contains(&["tagging results", "dog, park"], "* Animal\n* Scene")]);
        let b = Backends::new()
            .with_tagger(Arc::new(ScriptedTagger::uniform(scores)), BackendPolicy::default(), id())
            .with_chat(Arc::new(chat), BackendPolicy::default(), id());
        let batch = tag_collection(&b, &col, &vocab, 2, 2, 0.0).unwrap();
        assert_eq!(batch.records[0].tags.iter().map(|t| t.tag.as_str()).collect::<Vec<_>>(), ["dog", "park"]);
        let run = propose_from_tags(&b, &batch.records, &TagProposeOptions::default()).unwrap();
        assert_eq!(run.subsets, vec![vec!["a".to_string(), "b".to_string()]]);
        assert_eq!(run.raw_criteria.len(), 2);
    }

    #[test]
    fn small_budget_splits_requests() {
        let recs: Vec<TagRecord> = (0..6)
            .map(|i| TagRecord::new(format!("i{i}"), vec![ScoredTag { tag: "x".repeat(400), score: 1.0 }]))
            .collect();
        let chat = ScriptedChat::new(vec![ChatRule::contains(&["tagging results"], "* Texture")]);
        let b = Backends::new().with_chat(Arc::new(chat), BackendPolicy::default(), id());
        let opts = TagProposeOptions { token_budget: 700, ..Default::default() };
        let run = propose_from_tags(&b, &recs, &opts).unwrap();
        assert!(run.subsets.len() > 1);
        assert_eq!(run.subsets.concat().len(), 6);
        assert_eq!(b.call_counts().chat as usize, run.subsets.len());
    }
}
