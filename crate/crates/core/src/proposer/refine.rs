//! Consolidation of the raw criteria pool, with lineage recovered by
//! nearest embedding.

use serde::{Deserialize, Serialize};

use super::{ProposerError, UniqueIds};
use crate::ask::chat_parsed;
use crate::backends::{cosine, Backends};
use crate::metrics::Embedder;
use crate::parse::{dedup_names, parse_bulleted_list};
use crate::prompts;
use crate::types::{slugify, Criterion, CriterionStatus, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    /// Raw criteria whose best match is below this cosine are discarded.
    pub lineage_floor: f64,
    pub max_tokens: u32,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self { lineage_floor: 0.5, max_tokens: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// Refined criteria in the order the model listed them.
    pub refined: Vec<Criterion>,
    /// Raw criterion ids not attributed to any refined criterion.
    pub discarded: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Asks the chat model to merge and rephrase the raw pool, then attributes
/// every raw criterion to its nearest refined one.
///
/// If the answer cannot be parsed after one re-prompt, the raw pool is
/// returned as refined with identity lineage and a warning.
pub fn refine_criteria_pool(
    backends: &Backends,
    embedder: &dyn Embedder,
    raw: &[Criterion],
    opts: &RefineOptions,
) -> Result<Refinement, ProposerError> {
    if raw.is_empty() {
        return Err(ProposerError::EmptyInput("empty raw criteria pool"));
    }
    let provenance = raw[0].provenance;
    let names: Vec<&str> = raw.iter().map(|c| c.name.as_str()).collect();
    let parsed = chat_parsed(backends, &prompts::refine_criteria(&names), opts.max_tokens, None, 1, parse_bulleted_list)?;
    let refined_names = match parsed.value {
        Ok(n) => dedup_names(n),
        Err(e) => return unrefined(raw, format!("refinement answer unparseable after {} attempts ({e}); keeping the raw pool", parsed.attempts)),
    };
    attribute(embedder, raw, &refined_names, provenance, opts.lineage_floor)
}

fn unrefined(raw: &[Criterion], warning: String) -> Result<Refinement, ProposerError> {
    let refined = raw
        .iter()
        .map(|c| {
            let mut r = Criterion::new(slugify(&c.name), &c.name, c.provenance, CriterionStatus::Refined)?;
            r.merged_from = vec![c.criterion_id.clone()];
            Ok(r)
        })
        .collect::<Result<Vec<_>, ProposerError>>()?;
    let mut ids = UniqueIds::default();
    let refined = refined
        .into_iter()
        .map(|mut c| {
            c.criterion_id = ids.next(&c.criterion_id);
            c
        })
        .collect();
    Ok(Refinement { refined, discarded: Vec::new(), warnings: vec![warning] })
}

/// Builds refined criteria from `names` and assigns each raw criterion to
/// the refined one with the highest cosine, if at least `floor`.
pub(crate) fn attribute(
    embedder: &dyn Embedder,
    raw: &[Criterion],
    names: &[String],
    provenance: Provenance,
    floor: f64,
) -> Result<Refinement, ProposerError> {
    let mut ids = UniqueIds::default();
    let mut refined = names
        .iter()
        .map(|n| Criterion::new(ids.next(&slugify(n)), n, provenance, CriterionStatus::Refined))
        .collect::<Result<Vec<_>, _>>()?;
    let mut texts: Vec<String> = names.to_vec();
    texts.extend(raw.iter().map(|c| c.name.clone()));
    let vecs = embedder.embed_texts(&texts)?;
    let (refined_vecs, raw_vecs) = vecs.split_at(names.len());

    let mut discarded = Vec::new();
    for (c, v) in raw.iter().zip(raw_vecs) {
        let best = refined_vecs
            .iter()
            .enumerate()
            .map(|(i, r)| (i, cosine(v, r)))
            .fold(None::<(usize, f64)>, |acc, (i, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((i, s)),
            });
        match best {
            Some((i, s)) if s >= floor => refined[i].merged_from.push(c.criterion_id.clone()),
            _ => discarded.push(c.criterion_id.clone()),
        }
    }
    let warnings = refined
        .iter()
        .filter(|c| c.merged_from.is_empty())
        .map(|c| format!("refined criterion `{}` has no raw criterion within the lineage floor", c.name))
        .collect();
    Ok(Refinement { refined, discarded, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::scripted::{ChatRule, ScriptedChat, ScriptedEmbed};
    use crate::backends::{BackendIdentity, BackendPolicy};
    use crate::proposer::accumulate_criteria;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn id() -> BackendIdentity {
        BackendIdentity { kind: "scripted".into(), endpoint: String::new(), model_id: "m".into() }
    }

    fn backends(answer: &str) -> Backends {
        let vectors: BTreeMap<String, Vec<f64>> = [
            ("Activity", vec![1.0, 0.0, 0.0]),
            ("activity performed", vec![0.9, 0.1, 0.0]),
            ("what people do", vec![0.8, 0.2, 0.0]),
            ("Location", vec![0.0, 1.0, 0.0]),
            ("place", vec![0.1, 0.9, 0.0]),
            ("Noise", vec![0.0, 0.0, 1.0]),
            ("Mood", vec![0.5, 0.5, 0.0]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Backends::new()
            .with_chat(Arc::new(ScriptedChat::new(vec![ChatRule::contains(&["refine this list"], answer)])), BackendPolicy::default(), id())
            .with_embed(Arc::new(ScriptedEmbed::new(vectors, 8)), BackendPolicy::default(), id())
    }

    fn raw() -> Vec<Criterion> {
        accumulate_criteria(["activity performed", "what people do", "place", "Noise"], Provenance::CaptionProposer).unwrap()
    }

    #[test]
    fn lineage_by_nearest_embedding() {
        let b = backends("* Activity\n* Location\n* Mood");
        let r = refine_criteria_pool(&b, &b, &raw(), &RefineOptions::default()).unwrap();
        let names: Vec<_> = r.refined.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["Activity", "Location", "Mood"]);
        assert_eq!(r.refined[0].merged_from, ["raw-activity-performed", "raw-what-people-do"]);
        assert_eq!(r.refined[1].merged_from, ["raw-place"]);
        assert_eq!(r.discarded, ["raw-noise"]);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.refined.iter().all(|c| c.status == CriterionStatus::Refined));
    }

    #[test]
    fn unparseable_keeps_raw_pool() {
        let b = backends("Sorry, no.");
        let r = refine_criteria_pool(&b, &b, &raw(), &RefineOptions::default()).unwrap();
        assert_eq!(r.refined.len(), 4);
        assert!(r.refined.iter().all(|c| c.merged_from.len() == 1));
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(b.call_counts().chat, 2);
    }
}
