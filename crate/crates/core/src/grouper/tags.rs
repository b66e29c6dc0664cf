//! The tag-based grouper: an LLM-built tag hierarchy scored per image by a
//! tagging model.

use std::collections::BTreeMap;

use super::{GroupOptions, GrouperError, GroupingOutcome, TagHierarchy};
use crate::ask::chat_parsed;
use crate::backends::Backends;
use crate::exec::{par_map, ItemFailure};
use crate::parse::{dedup_names, parse_ampersand_list, parse_bulleted_list};
use crate::prompts;
use crate::types::{Collection, Criterion, Granularity, Substructure, UNASSIGNED};

const COARSE_PER_MID: usize = 3;
const FINE_PER_MID: usize = 10;

/// Mid tags from repeated sampling, each expanded into coarse and fine tags.
/// Failed samples and expansions are skipped with a warning.
pub fn build_tag_hierarchy(
    backends: &Backends,
    criterion: &Criterion,
    opts: &GroupOptions,
) -> Result<(TagHierarchy, Vec<String>), GrouperError> {
    if criterion.name.trim().is_empty() {
        return Err(GrouperError::EmptyCriterion(criterion.criterion_id.clone()));
    }
    let max_tokens = opts.hierarchy_max_tokens;
    let mut warnings = Vec::new();
    let seeds: Vec<u64> = (0..opts.tag_samples.max(1) as u64).map(|i| opts.seed.wrapping_add(i)).collect();
    let samples = par_map(&seeds, opts.workers, |_, &s| {
        chat_parsed(backends, &prompts::mid_tags(&criterion.name), max_tokens, Some(s), 0, parse_bulleted_list)
    });
    let mut mid = Vec::new();
    for (s, res) in seeds.iter().zip(samples) {
        match res {
            Ok(p) => match p.value {
                Ok(names) => mid.extend(names),
                Err(e) => warnings.push(format!("mid-tag sample {s}: {e}")),
            },
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => warnings.push(format!("mid-tag sample {s}: {e}")),
        }
    }
    let mid = dedup_names(mid);
    if mid.is_empty() {
        return Err(GrouperError::NoTagCandidates(criterion.name.clone()));
    }

    let expand = |prompt: prompts::Prompt, cap: usize| {
        chat_parsed(backends, &prompt, max_tokens, None, 1, |t| parse_ampersand_list(t, cap))
    };
    let expansions = par_map(&mid, opts.workers, |_, m| {
        (
            expand(prompts::coarse_tags(&criterion.name, m, COARSE_PER_MID), COARSE_PER_MID),
            expand(prompts::fine_tags(&criterion.name, m, FINE_PER_MID), FINE_PER_MID),
        )
    });
    let mut super_of = BTreeMap::new();
    let mut sub_of = BTreeMap::new();
    for (m, (coarse, fine)) in mid.iter().zip(expansions) {
        for (label, res, map) in [("coarse", coarse, &mut super_of), ("fine", fine, &mut sub_of)] {
            let tags = match res {
                Ok(p) => p.value.unwrap_or_else(|e| {
                    warnings.push(format!("{label} expansion of `{m}`: {e}"));
                    Vec::new()
                }),
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => {
                    warnings.push(format!("{label} expansion of `{m}`: {e}"));
                    Vec::new()
                }
            };
            map.insert(m.clone(), tags);
        }
    }
    Ok((TagHierarchy { criterion_id: criterion.criterion_id.clone(), mid, super_of, sub_of }, warnings))
}

/// Assigns each image the top-scoring candidate at every level. Ties go to
/// the lexicographically first tag and are reported; tagger failures give
/// the sentinel.
pub fn group_by_tags(
    backends: &Backends,
    collection: &Collection,
    hierarchy: &TagHierarchy,
    opts: &GroupOptions,
) -> Result<GroupingOutcome, GrouperError> {
    let mut out = GroupingOutcome::new(&hierarchy.criterion_id);
    let levels = [hierarchy.coarse_candidates(), hierarchy.mid.clone(), hierarchy.fine_candidates()];
    for (g, cands) in Granularity::ALL.into_iter().zip(&levels) {
        if cands.is_empty() {
            out.warnings.push(format!("no {g} candidates; every image is unassigned at that level"));
        }
    }
    let results = par_map(collection.records(), opts.workers, |_, rec| {
        levels
            .iter()
            .map(|cands| {
                if cands.is_empty() {
                    return Ok(None);
                }
                backends.tag(&rec.image_id, &rec.source, cands, cands.len().min(2)).map(Some)
            })
            .collect::<Vec<_>>()
    });
    let mut names: Vec<Vec<String>> = vec![Vec::with_capacity(collection.len()); 3];
    for (rec, row) in collection.records().iter().zip(results) {
        for (li, res) in row.into_iter().enumerate() {
            let name = match res {
                Ok(Some(t)) => {
                    if t.top_is_tied() {
                        out.warnings.push(format!("{}: tied top score at {} level", rec.image_id, Granularity::ALL[li]));
                    }
                    t.top().map_or(UNASSIGNED.to_string(), |s| s.tag.clone())
                }
                Ok(None) => UNASSIGNED.to_string(),
                Err(e) if e.is_fatal() => return Err(e.into()),
                Err(e) => {
                    out.failures.push(ItemFailure::new(&rec.image_id, format!("{} tagging: {e}", Granularity::ALL[li])));
                    UNASSIGNED.to_string()
                }
            };
            names[li].push(name);
        }
    }
    for (g, level) in Granularity::ALL.into_iter().zip(&names) {
        out.substructures.push(Substructure::from_assignments(
            &hierarchy.criterion_id,
            g,
            collection.ids().zip(level).map(|(id, n)| (id, n.as_str())),
        ));
    }
    out.tag_hierarchy = Some(hierarchy.clone());
    Ok(out)
}
