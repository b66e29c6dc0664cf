//! Generic captioning and caption-based criteria proposal.

use serde::{Deserialize, Serialize};

use super::{accumulate_criteria, partition, shuffled_order, ProposerError, ProposerKind, ProposerRun};
use crate::ask::chat_parsed;
use crate::backends::Backends;
use crate::exec::{par_map, ItemFailure};
use crate::parse::parse_bulleted_list;
use crate::prompts::{self, Prompt};
use crate::types::{CaptionRecord, Collection, TypeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptionOptions {
    pub max_tokens: u32,
    /// Largest tolerated fraction of failed images.
    pub failure_threshold: f64,
    pub workers: usize,
}

impl Default for CaptionOptions {
    fn default() -> Self {
        Self { max_tokens: 512, failure_threshold: 0.05, workers: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionBatch {
    /// One record per successful image, in collection order.
    pub captions: Vec<CaptionRecord>,
    pub failures: Vec<ItemFailure>,
}

/// Sends `prompt` with every image and collects the answers.
///
/// Failed images are reported and skipped; the batch fails when their share
/// exceeds the threshold, when nothing succeeded, or on errors that would
/// hit every image alike (see [`crate::backends::BackendError::is_fatal`]).
pub fn caption_images(
    backends: &Backends,
    collection: &Collection,
    prompt: &Prompt,
    opts: &CaptionOptions,
    make: impl Fn(&str, String) -> Result<CaptionRecord, TypeError> + Sync,
) -> Result<CaptionBatch, ProposerError> {
    let results = par_map(collection.records(), opts.workers, |_, rec| {
        let req = backends.vision_request(&rec.source, &prompt.system, &prompt.user)?.max_tokens(opts.max_tokens);
        backends.caption(&req)
    });
    let mut batch = CaptionBatch::default();
    for (rec, res) in collection.records().iter().zip(results) {
        match res {
            Ok(text) => match make(&rec.image_id, text) {
                Ok(c) => batch.captions.push(c),
                Err(e) => batch.failures.push(ItemFailure::new(&rec.image_id, e)),
            },
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => batch.failures.push(ItemFailure::new(&rec.image_id, e)),
        }
    }
    let total = collection.len();
    let failed = batch.failures.len();
    if batch.captions.is_empty() || failed as f64 > opts.failure_threshold * total as f64 {
        return Err(ProposerError::TooManyFailures { failed, total, threshold: opts.failure_threshold });
    }
    Ok(batch)
}

/// One detailed, criterion-agnostic caption per image.
pub fn generate_generic_captions(
    backends: &Backends,
    collection: &Collection,
    opts: &CaptionOptions,
) -> Result<CaptionBatch, ProposerError> {
    caption_images(backends, collection, &prompts::generic_caption(), opts, |id, text| {
        CaptionRecord::generic(id, text.trim())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposeOptions {
    pub seed: u64,
    pub subset_size: usize,
    /// Number of criteria requested per subset.
    pub criteria_per_subset: usize,
    pub max_tokens: u32,
    pub workers: usize,
}

impl Default for ProposeOptions {
    fn default() -> Self {
        Self { seed: 0, subset_size: 400, criteria_per_subset: 10, max_tokens: 1024, workers: 4 }
    }
}

/// Per-subset criteria lists for prompts sent in parallel. Subsets whose
/// answers do not parse after one re-prompt are reported and left empty.
pub(crate) fn propose_subsets(
    backends: &Backends,
    prompts: &[Prompt],
    labels: &[String],
    max_tokens: u32,
    workers: usize,
) -> Result<(Vec<Vec<String>>, Vec<ItemFailure>), ProposerError> {
    let results = par_map(prompts, workers, |_, p| chat_parsed(backends, p, max_tokens, None, 1, parse_bulleted_list));
    let mut lists = Vec::with_capacity(prompts.len());
    let mut failures = Vec::new();
    for (label, res) in labels.iter().zip(results) {
        let parsed = res?;
        match parsed.value {
            Ok(names) => lists.push(names),
            Err(e) => {
                failures.push(ItemFailure::new(label, format!("unparseable after {} attempts: {e}", parsed.attempts)));
                lists.push(Vec::new());
            }
        }
    }
    Ok((lists, failures))
}

/// Shuffles the captions, splits them into subsets and asks the chat model
/// for criteria per subset; the union forms the raw pool.
pub fn propose_from_captions(
    backends: &Backends,
    captions: &[CaptionRecord],
    opts: &ProposeOptions,
) -> Result<ProposerRun, ProposerError> {
    if captions.is_empty() {
        return Err(ProposerError::EmptyInput("no captions"));
    }
    let order = shuffled_order(captions.len(), opts.seed);
    let shuffled: Vec<&CaptionRecord> = order.iter().map(|&i| &captions[i]).collect();
    let subsets = partition(&shuffled, opts.subset_size);
    let prompts: Vec<Prompt> = subsets
        .iter()
        .map(|s| {
            let texts: Vec<&str> = s.iter().map(|c| c.text.as_str()).collect();
            prompts::caption_criteria(&texts, opts.criteria_per_subset)
        })
        .collect();
    let labels: Vec<String> = (0..subsets.len()).map(|i| format!("subset {i}")).collect();
    let (subset_criteria, failures) = propose_subsets(backends, &prompts, &labels, opts.max_tokens, opts.workers)?;
    let raw = accumulate_criteria(
        subset_criteria.iter().flatten().map(String::as_str),
        ProposerKind::Caption.provenance(),
    )?;
    if raw.is_empty() {
        return Err(ProposerError::NoCriteria);
    }
    Ok(ProposerRun {
        kind: ProposerKind::Caption,
        shuffle_seed: opts.seed,
        subset_size: opts.subset_size,
        subsets: subsets.iter().map(|s| s.iter().map(|c| c.image_id.clone()).collect()).collect(),
        subset_criteria,
        raw_criteria: raw,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::scripted::{ChatRule, ScriptedChat, ScriptedFailure, ScriptedVision, VisionRule};
    use crate::backends::{BackendIdentity, BackendPolicy};
    use crate::types::{validate_collection, ImageRecord};
    use std::sync::Arc;

    fn id() -> BackendIdentity {
        BackendIdentity { kind: "scripted".into(), endpoint: String::new(), model_id: "m".into() }
    }

    fn policy() -> BackendPolicy {
        BackendPolicy { base_backoff_ms: 0, max_retries: 0, ..Default::default() }
    }

    fn collection(n: usize) -> Collection {
        validate_collection((0..n).map(|i| ImageRecord::new(format!("img{i}"), format!("/data/img{i}.jpg"))).collect())
            .unwrap()
    }

    fn vision(rules: Vec<VisionRule>) -> Backends {
        Backends::new().with_vision(Arc::new(ScriptedVision::new(rules)), policy(), id())
    }

    fn rule(source: &str, response: &str) -> VisionRule {
        VisionRule { source: Some(source.into()), rule: ChatRule::contains(&[], response) }
    }

    fn failing(source: &str) -> VisionRule {
        VisionRule {
            source: Some(source.into()),
            rule: ChatRule { error: Some(ScriptedFailure::Fetch), ..Default::default() },
        }
    }

    #[test]
    fn captions_in_input_order() {
        let b = vision(vec![rule("img0", "zero"), rule("img1", "one"), rule("img2", "two")]);
        let batch = generate_generic_captions(&b, &collection(3), &CaptionOptions::default()).unwrap();
        let texts: Vec<_> = batch.captions.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["zero", "one", "two"]);
    }

    #[test]
    fn failure_threshold() {
        let b = vision(vec![rule("img0", "zero"), failing("img1"), rule("img2", "two")]);
        let opts = CaptionOptions { failure_threshold: 0.5, ..Default::default() };
        let batch = generate_generic_captions(&b, &collection(3), &opts).unwrap();
        assert_eq!((batch.captions.len(), batch.failures.len()), (2, 1));
        assert_eq!(batch.failures[0].item, "img1");
        assert!(generate_generic_captions(&b, &collection(3), &CaptionOptions::default()).is_err());

        let all_fail = vision(vec![failing("img")]);
        let opts = CaptionOptions { failure_threshold: 1.0, ..Default::default() };
        assert!(generate_generic_captions(&all_fail, &collection(3), &opts).is_err());
    }

    #[test]
    fn two_subsets_dedup_to_two_criteria() {
        let chat = ScriptedChat::new(vec![ChatRule::contains(&["captioning"], "* Activity\n* Location")]);
        let b = Backends::new().with_chat(Arc::new(chat), policy(), id());
        let caps: Vec<CaptionRecord> =
            (0..4).map(|i| CaptionRecord::generic(format!("i{i}"), format!("caption {i}")).unwrap()).collect();
        let opts = ProposeOptions { subset_size: 2, ..Default::default() };
        let run = propose_from_captions(&b, &caps, &opts).unwrap();
        assert_eq!(run.subsets.len(), 2);
        assert_eq!(run.raw_criteria.len(), 2);
        let mut members: Vec<String> = run.subsets.concat();
        members.sort();
        assert_eq!(members, ["i0", "i1", "i2", "i3"]);
        assert_eq!(run, propose_from_captions(&b, &caps, &opts).unwrap());
    }

    #[test]
    fn unparseable_subset_is_reported() {
        let chat = ScriptedChat::new(vec![ChatRule::contains(&["captioning"], "I cannot help with that.")]);
        let b = Backends::new().with_chat(Arc::new(chat), policy(), id());
        let caps = vec![CaptionRecord::generic("a", "x").unwrap()];
        assert_eq!(propose_from_captions(&b, &caps, &ProposeOptions::default()), Err(ProposerError::NoCriteria));
    }
}
