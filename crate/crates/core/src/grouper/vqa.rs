//! The image-based grouper: one three-granularity VQA question per
//! criterion, answered per image.

use super::{GroupOptions, GrouperError, GroupingOutcome, VqaQuestion};
use crate::ask::{chat_parsed, vision_parsed};
use crate::backends::Backends;
use crate::exec::{par_map, ItemFailure};
use crate::parse::{extract_asterisk_span, parse_vqa_triple, ParseError};
use crate::prompts::{self, Prompt};
use crate::types::{Collection, Criterion, Granularity, Substructure, UNASSIGNED};

const REQUIRED: [&str; 3] = ["abstract", "common", "specific"];

fn parse_question(text: &str) -> Result<String, ParseError> {
    let q = extract_asterisk_span(text)?;
    let lower = q.to_lowercase();
    match REQUIRED.iter().find(|w| !lower.contains(*w)) {
        Some(w) => Err(ParseError::MissingInstruction(format!("no `{w}` answer requested"))),
        None => Ok(q),
    }
}

/// A VQA question for `criterion` that asks for abstract, common and
/// specific answers. One re-prompt; then the criterion has no VQA grouping.
pub fn vqa_question_for_criterion(
    backends: &Backends,
    criterion: &Criterion,
    opts: &GroupOptions,
) -> Result<VqaQuestion, GrouperError> {
    if criterion.name.trim().is_empty() {
        return Err(GrouperError::EmptyCriterion(criterion.criterion_id.clone()));
    }
    let parsed = chat_parsed(backends, &prompts::vqa_question(&criterion.name), opts.name_max_tokens.max(256), None, 1, parse_question)?;
    let question = parsed.value.map_err(|_| GrouperError::VqaUnavailable(criterion.name.clone()))?;
    Ok(VqaQuestion { criterion_id: criterion.criterion_id.clone(), question })
}

/// Asks every image the question; answers are grouped by identical
/// (case-insensitive) names per level. Unparseable triples and non-fatal
/// failures give the sentinel at all levels.
pub fn group_by_vqa(
    backends: &Backends,
    collection: &Collection,
    question: &VqaQuestion,
    opts: &GroupOptions,
) -> Result<GroupingOutcome, GrouperError> {
    let prompt = Prompt { system: "You are a helpful assistant.".into(), user: question.question.clone() };
    let results = par_map(collection.records(), opts.workers, |_, rec| {
        vision_parsed(backends, &rec.source, &prompt, opts.assign_max_tokens.max(128), 0, parse_vqa_triple)
    });
    let mut out = GroupingOutcome::new(&question.criterion_id);
    let mut triples: Vec<[String; 3]> = Vec::with_capacity(results.len());
    for (rec, res) in collection.records().iter().zip(results) {
        let triple = match res {
            Ok(parsed) => parsed.value.unwrap_or_else(|e| {
                out.failures.push(ItemFailure::new(&rec.image_id, format!("VQA answer: {e}")));
                sentinel_triple()
            }),
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => {
                out.failures.push(ItemFailure::new(&rec.image_id, e));
                sentinel_triple()
            }
        };
        triples.push(triple);
    }
    for (li, g) in Granularity::ALL.into_iter().enumerate() {
        out.substructures.push(Substructure::from_assignments(
            &question.criterion_id,
            g,
            collection.ids().zip(&triples).map(|(id, t)| (id, t[li].as_str())),
        ));
    }
    out.question = Some(question.clone());
    Ok(out)
}

fn sentinel_triple() -> [String; 3] {
    [UNASSIGNED.to_string(), UNASSIGNED.to_string(), UNASSIGNED.to_string()]
}
