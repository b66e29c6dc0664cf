//! The caption-based grouper: criterion captions, initial names, a
//! three-level candidate hierarchy and per-level assignment.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::{GroupOptions, GrouperError, GroupingMode, GroupingOutcome, InitialNameSet};
use crate::ask::chat_parsed;
use crate::backends::{cosine, BackendError, Backends};
use crate::exec::{par_map, ItemFailure};
use crate::parse::{dedup_names, extract_asterisk_span, parse_bulleted_list, parse_hierarchy, truncate_words};
use crate::proposer::{caption_images, CaptionBatch, CaptionOptions};
use crate::prompts::{self, Prompt};
use crate::types::{
    name_key, CandidateHierarchy, CaptionRecord, Collection, Criterion, Granularity, Substructure, UNASSIGNED,
};

fn check_name(criterion: &Criterion) -> Result<(), GrouperError> {
    if criterion.name.trim().is_empty() {
        return Err(GrouperError::EmptyCriterion(criterion.criterion_id.clone()));
    }
    Ok(())
}

/// One caption per image focused on `criterion`.
pub fn generate_criterion_captions(
    backends: &Backends,
    collection: &Collection,
    criterion: &Criterion,
    opts: &GroupOptions,
) -> Result<CaptionBatch, GrouperError> {
    check_name(criterion)?;
    let prompt = match &opts.caption_prompt {
        Some(template) => {
            let base = prompts::criterion_caption(&criterion.name);
            Prompt { system: base.system, user: template.replace("{CRITERION}", &criterion.name) }
        }
        None => prompts::criterion_caption(&criterion.name),
    };
    let copts = CaptionOptions {
        max_tokens: opts.caption_max_tokens,
        failure_threshold: opts.failure_threshold,
        workers: opts.workers,
    };
    let id = criterion.criterion_id.as_str();
    Ok(caption_images(backends, collection, &prompt, &copts, |img, text| {
        CaptionRecord::for_criterion(img, text.trim(), id)
    })?)
}

/// Notes gathered while running a stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageNotes {
    pub warnings: Vec<String>,
    pub failures: Vec<ItemFailure>,
}

/// A short free-form name per captioned image. Unparseable answers (after
/// one re-prompt) and non-fatal backend errors give the sentinel.
pub fn initial_naming(
    backends: &Backends,
    captions: &[CaptionRecord],
    criterion: &Criterion,
    opts: &GroupOptions,
) -> Result<(InitialNameSet, StageNotes), GrouperError> {
    check_name(criterion)?;
    let results = par_map(captions, opts.workers, |_, c| {
        let p = prompts::initial_name(&criterion.name, &c.text);
        chat_parsed(backends, &p, opts.name_max_tokens, None, 1, extract_asterisk_span)
    });
    let mut names = BTreeMap::new();
    let mut notes = StageNotes::default();
    for (c, res) in captions.iter().zip(results) {
        let name = match res {
            Ok(parsed) => match parsed.value {
                Ok(n) => {
                    let (short, cut) = truncate_words(&n, opts.max_name_words);
                    if cut {
                        notes.warnings.push(format!("{}: initial name `{n}` truncated to `{short}`", c.image_id));
                    }
                    short
                }
                Err(e) => {
                    notes.failures.push(ItemFailure::new(&c.image_id, format!("initial name: {e}")));
                    UNASSIGNED.to_string()
                }
            },
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                notes.failures.push(ItemFailure::new(&c.image_id, format!("initial name: {e}")));
                UNASSIGNED.to_string()
            }
        };
        names.insert(c.image_id.clone(), name);
    }
    Ok((InitialNameSet { criterion_id: criterion.criterion_id.clone(), names }, notes))
}

/// Coarse, mid and fine candidates organized from the distinct initial names.
pub fn build_granularity_hierarchy(
    backends: &Backends,
    initial: &InitialNameSet,
    criterion: &Criterion,
    opts: &GroupOptions,
) -> Result<CandidateHierarchy, GrouperError> {
    let distinct = initial.distinct();
    if distinct.is_empty() {
        return Err(hierarchy_error(criterion, "no initial names to organize"));
    }
    let refs: Vec<&str> = distinct.iter().map(String::as_str).collect();
    let parsed = chat_parsed(
        backends,
        &prompts::hierarchy(&criterion.name, &refs),
        opts.hierarchy_max_tokens,
        None,
        opts.hierarchy_retries,
        parse_hierarchy,
    )?;
    let [coarse, mid, fine] =
        parsed.value.map_err(|e| hierarchy_error(criterion, format!("{e} after {} attempts", parsed.attempts)))?;
    CandidateHierarchy::new(&criterion.criterion_id, coarse, mid, fine)
        .map_err(|e| hierarchy_error(criterion, e.to_string()))
}

/// Single consolidated candidate list (flat mode).
pub fn flat_candidates(
    backends: &Backends,
    initial: &InitialNameSet,
    criterion: &Criterion,
    opts: &GroupOptions,
) -> Result<Vec<String>, GrouperError> {
    let distinct = initial.distinct();
    if distinct.is_empty() {
        return Err(hierarchy_error(criterion, "no initial names to consolidate"));
    }
    let refs: Vec<&str> = distinct.iter().map(String::as_str).collect();
    let parsed = chat_parsed(
        backends,
        &prompts::flat_refinement(&criterion.name, &refs),
        opts.hierarchy_max_tokens,
        None,
        opts.hierarchy_retries,
        parse_bulleted_list,
    )?;
    parsed
        .value
        .map(dedup_names)
        .map_err(|e| hierarchy_error(criterion, format!("{e} after {} attempts", parsed.attempts)))
}

fn hierarchy_error(criterion: &Criterion, message: impl Into<String>) -> GrouperError {
    GrouperError::Hierarchy { criterion: criterion.name.clone(), message: message.into() }
}

/// Maps free-text answers onto a candidate list: exact (case-insensitive)
/// matches first, then the nearest candidate by embedding if its cosine
/// reaches the floor, else the sentinel.
pub struct NameSnapper<'a> {
    backends: &'a Backends,
    candidates: Vec<String>,
    floor: f64,
    vectors: OnceLock<Result<Vec<Vec<f64>>, BackendError>>,
}

impl<'a> NameSnapper<'a> {
    pub fn new(backends: &'a Backends, candidates: Vec<String>, floor: f64) -> Self {
        Self { backends, candidates, floor, vectors: OnceLock::new() }
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn snap(&self, answer: &str) -> Result<String, BackendError> {
        let key = name_key(answer);
        if let Some(c) = self.candidates.iter().find(|c| name_key(c) == key) {
            return Ok(c.clone());
        }
        if self.candidates.is_empty() || key.is_empty() {
            return Ok(UNASSIGNED.to_string());
        }
        let cands = self.vectors.get_or_init(|| self.backends.embed(&self.candidates)).clone()?;
        let v = self.backends.embed(&[answer.to_string()])?.remove(0);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in cands.iter().enumerate() {
            let s = cosine(&v, c);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        Ok(match best {
            Some((i, s)) if s >= self.floor => self.candidates[i].clone(),
            _ => UNASSIGNED.to_string(),
        })
    }
}

/// One candidate name for one caption at the snapper's level. Unparseable
/// answers give the sentinel.
pub fn final_assignment(
    backends: &Backends,
    snapper: &NameSnapper,
    criterion: &Criterion,
    caption: &str,
    opts: &GroupOptions,
) -> Result<String, BackendError> {
    let refs: Vec<&str> = snapper.candidates().iter().map(String::as_str).collect();
    let p = prompts::final_assignment(&criterion.name, caption, &refs);
    let parsed = chat_parsed(backends, &p, opts.assign_max_tokens, None, 1, extract_asterisk_span)?;
    match parsed.value {
        Ok(answer) => snapper.snap(&answer),
        Err(_) => Ok(UNASSIGNED.to_string()),
    }
}

/// Assigns every captioned image at each level; images without a caption
/// and non-fatal failures get the sentinel.
fn assign_levels(
    backends: &Backends,
    collection: &Collection,
    captions: &[CaptionRecord],
    criterion: &Criterion,
    levels: &[(Granularity, Vec<String>)],
    opts: &GroupOptions,
    out: &mut GroupingOutcome,
) -> Result<(), GrouperError> {
    let snappers: Vec<NameSnapper> =
        levels.iter().map(|(_, c)| NameSnapper::new(backends, c.clone(), opts.snap_floor)).collect();
    let results = par_map(captions, opts.workers, |_, c| {
        snappers
            .iter()
            .map(|s| final_assignment(backends, s, criterion, &c.text, opts))
            .collect::<Vec<_>>()
    });
    let mut per_level: Vec<BTreeMap<&str, String>> = vec![BTreeMap::new(); levels.len()];
    for (c, row) in captions.iter().zip(results) {
        for (li, res) in row.into_iter().enumerate() {
            let name = match res {
                Ok(n) => n,
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => {
                    out.failures.push(ItemFailure::new(&c.image_id, format!("{} assignment: {e}", levels[li].0)));
                    UNASSIGNED.to_string()
                }
            };
            per_level[li].insert(c.image_id.as_str(), name);
        }
    }
    for ((g, _), names) in levels.iter().zip(&per_level) {
        out.substructures.push(cover(collection, &criterion.criterion_id, *g, names));
    }
    Ok(())
}

/// Substructure over the whole collection; images missing from `names` get
/// the sentinel.
fn cover(collection: &Collection, criterion_id: &str, g: Granularity, names: &BTreeMap<&str, String>) -> Substructure {
    Substructure::from_assignments(
        criterion_id,
        g,
        collection.ids().map(|id| (id, names.get(id).map_or(UNASSIGNED, String::as_str))),
    )
}

/// Runs the caption-based grouper for one criterion in the configured mode.
pub fn group_by_captions(
    backends: &Backends,
    collection: &Collection,
    criterion: &Criterion,
    opts: &GroupOptions,
) -> Result<GroupingOutcome, GrouperError> {
    let mut out = GroupingOutcome::new(&criterion.criterion_id);
    let batch = generate_criterion_captions(backends, collection, criterion, opts)?;
    out.failures.extend(batch.failures);
    let (initial, notes) = initial_naming(backends, &batch.captions, criterion, opts)?;
    out.warnings.extend(notes.warnings);
    out.failures.extend(notes.failures);

    match opts.mode {
        GroupingMode::Initial => {
            let names: BTreeMap<&str, String> = initial.names.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
            out.substructures.push(cover(collection, &criterion.criterion_id, Granularity::Mid, &names));
        }
        GroupingMode::Flat => {
            let cands = flat_candidates(backends, &initial, criterion, opts)?;
            assign_levels(backends, collection, &batch.captions, criterion, &[(Granularity::Mid, cands.clone())], opts, &mut out)?;
            out.flat_candidates = Some(cands);
        }
        GroupingMode::Multi => {
            let h = build_granularity_hierarchy(backends, &initial, criterion, opts)?;
            let levels: Vec<(Granularity, Vec<String>)> =
                Granularity::ALL.iter().map(|&g| (g, h.level(g).to_vec())).collect();
            assign_levels(backends, collection, &batch.captions, criterion, &levels, opts, &mut out)?;
            out.hierarchy = Some(h);
        }
    }
    out.initial = Some(initial);
    out.captions = batch.captions;
    Ok(out)
}
