//! Criteria discovery from captions, tags or stitched image grids, and
//! consolidation of the resulting pool.

pub mod captions;
pub mod grids;
pub mod refine;
pub mod tags;

use std::collections::HashMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::exec::ItemFailure;
use crate::types::{name_key, slugify, Criterion, CriterionStatus, Provenance, TypeError};

pub use crate::parse::parse_bulleted_list;
pub use captions::{caption_images, generate_generic_captions, propose_from_captions, CaptionBatch, CaptionOptions, ProposeOptions};
pub use grids::{compose_grid, grid_chunks, propose_from_image_grids, GridOptions};
pub use refine::{refine_criteria_pool, Refinement, RefineOptions};
pub use tags::{propose_from_tags, split_by_budget, tag_collection, TagBatch, TagProposeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposerKind {
    #[default]
    Caption,
    Tag,
    Image,
}

impl ProposerKind {
    pub fn provenance(self) -> Provenance {
        match self {
            ProposerKind::Caption => Provenance::CaptionProposer,
            ProposerKind::Tag => Provenance::TagProposer,
            ProposerKind::Image => Provenance::ImageProposer,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProposerKind::Caption => "caption",
            ProposerKind::Tag => "tag",
            ProposerKind::Image => "image",
        }
    }
}

impl FromStr for ProposerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "caption" | "captions" => Ok(ProposerKind::Caption),
            "tag" | "tags" => Ok(ProposerKind::Tag),
            "image" | "grid" | "images" => Ok(ProposerKind::Image),
            other => Err(format!("unknown proposer `{other}` (caption, tag, image)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposerError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("{failed} of {total} items failed, above the allowed fraction {threshold}")]
    TooManyFailures { failed: usize, total: usize, threshold: f64 },
    #[error("nothing to propose from: {0}")]
    EmptyInput(&'static str),
    #[error("no criteria could be parsed from any subset")]
    NoCriteria,
    #[error("image grid: {0}")]
    Image(String),
    #[error(transparent)]
    Type(#[from] TypeError),
}

/// Result of running one proposer over a collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerRun {
    pub kind: ProposerKind,
    pub shuffle_seed: u64,
    pub subset_size: usize,
    /// Member image ids of each subset, in shuffled order.
    pub subsets: Vec<Vec<String>>,
    /// Names parsed from each subset's response (empty for skipped subsets).
    pub subset_criteria: Vec<Vec<String>>,
    pub raw_criteria: Vec<Criterion>,
    #[serde(default)]
    pub failures: Vec<ItemFailure>,
}

/// Permutation of `0..n` fixed by `seed`.
pub fn shuffled_order(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Consecutive chunks of at most `size` items (the last may be shorter).
pub fn partition<T: Clone>(items: &[T], size: usize) -> Vec<Vec<T>> {
    items.chunks(size.max(1)).map(<[T]>::to_vec).collect()
}

/// Uniform random subset holding `ceil(fraction * n)` items (at least one),
/// kept in input order. `fraction >= 1` returns everything.
pub fn sample_uniform<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Vec<T> {
    if fraction >= 1.0 || items.is_empty() {
        return items.to_vec();
    }
    let keep = ((fraction.max(0.0) * items.len() as f64).ceil() as usize).clamp(1, items.len());
    let mut chosen: Vec<usize> = shuffled_order(items.len(), seed ^ SAMPLE_STREAM)[..keep].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i].clone()).collect()
}

/// Keeps the sampling permutation independent of the subset shuffle.
const SAMPLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Case-insensitive union of names in the given order; the first spelling
/// of each name wins and the pool is sorted by name.
pub fn accumulate_criteria<'a>(
    names: impl IntoIterator<Item = &'a str>,
    provenance: Provenance,
) -> Result<Vec<Criterion>, TypeError> {
    let mut seen: HashMap<String, String> = HashMap::new();
    for n in names {
        let n = n.trim();
        if n.is_empty() {
            continue;
        }
        seen.entry(name_key(n)).or_insert_with(|| n.to_string());
    }
    let mut pool: Vec<(String, String)> = seen.into_iter().collect();
    pool.sort();
    let mut ids = UniqueIds::default();
    pool.into_iter()
        .map(|(_, name)| {
            let id = ids.next(&format!("raw-{}", slugify(&name)));
            Criterion::new(id, name, provenance, CriterionStatus::Raw)
        })
        .collect()
}

/// Hands out ids, suffixing `-2`, `-3`, ... on collisions.
#[derive(Debug, Default)]
pub(crate) struct UniqueIds {
    used: std::collections::HashSet<String>,
}

impl UniqueIds {
    pub(crate) fn next(&mut self, base: &str) -> String {
        let mut id = base.to_string();
        let mut n = 2;
        while !self.used.insert(id.clone()) {
            id = format!("{base}-{n}");
            n += 1;
        }
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_is_seeded_permutation() {
        let a = shuffled_order(50, 7);
        assert_eq!(a, shuffled_order(50, 7));
        assert_ne!(a, shuffled_order(50, 8));
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn partition_sizes() {
        let p = partition(&(0..130).collect::<Vec<_>>(), 64);
        assert_eq!(p.iter().map(Vec::len).collect::<Vec<_>>(), [64, 64, 2]);
    }

    #[test]
    fn sampling() {
        let items: Vec<u32> = (0..10).collect();
        assert_eq!(sample_uniform(&items, 1.0, 1), items);
        let s = sample_uniform(&items, 0.25, 1);
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sample_uniform(&items, 0.0, 1).len(), 1);
    }

    #[test]
    fn accumulate_dedups_and_sorts() {
        let c = accumulate_criteria(["Mood", "activity", "mood ", "Activity"], Provenance::CaptionProposer).unwrap();
        let names: Vec<_> = c.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["activity", "Mood"]);
        assert_eq!(c[0].criterion_id, "raw-activity");
        let again = accumulate_criteria(c.iter().map(|c| c.name.as_str()), Provenance::CaptionProposer).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn ids_are_unique() {
        let c = accumulate_criteria(["Time of day", "Time-of-day"], Provenance::TagProposer).unwrap();
        assert_ne!(c[0].criterion_id, c[1].criterion_id);
    }
}
