//! Whole-run evaluation and its tabular summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    clustering::{harmonic_mean, select_best_granularity, semantic_accuracy},
    criteria::{criteria_diversity, match_criteria, CriterionMatcher},
    Embedder, MetricError,
};
use crate::types::{Criterion, CriterionScores, GroundTruth, MetricReport, Substructure};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Minimum similarity for a predicted criterion to cover a ground-truth one.
    pub tpr_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { tpr_threshold: 0.7 }
    }
}

/// Scores a run: TPR and diversity over the criteria, then for every matched
/// (predicted, ground truth) pair the best-granularity CAcc, SAcc and HM.
///
/// `substructures` maps predicted criterion ids to whatever granularities
/// the grouper produced. Ground-truth criteria without a match are listed
/// in `uncovered`; matched ones lacking labels or substructures in `skipped`.
pub fn evaluate_run(
    criteria: &[Criterion],
    substructures: &BTreeMap<String, Vec<Substructure>>,
    gt: &GroundTruth,
    matcher: &dyn CriterionMatcher,
    embedder: &dyn Embedder,
    opts: EvalOptions,
) -> Result<MetricReport, MetricError> {
    let names: Vec<String> = criteria.iter().map(|c| c.name.clone()).collect();
    let matches = match_criteria(&names, &gt.criteria, matcher, opts.tpr_threshold)?;
    let covered = matches.iter().filter(|m| m.matched).count();
    let tpr = covered as f64 / gt.criteria.len() as f64;

    let mut notes = vec![
        "similarities are cosines clamped to [0, 1]".to_string(),
        "images assigned to `unassigned` score 0 in CAcc and SAcc".to_string(),
    ];
    let diversity = match criteria_diversity(&names, embedder) {
        Ok(d) => Some(d),
        Err(MetricError::TooFewCriteria(n)) => {
            notes.push(format!("diversity undefined for {n} criterion"));
            None
        }
        Err(e) => return Err(e),
    };

    let mut per_criterion = BTreeMap::new();
    let mut uncovered = Vec::new();
    let mut skipped = Vec::new();
    for m in &matches {
        if !m.matched {
            uncovered.push(m.gt.clone());
            continue;
        }
        notes.push(format!("`{}` covers `{}` (similarity {:.4})", m.predicted, m.gt, m.similarity));
        let Some(criterion) = criteria.iter().find(|c| c.name == m.predicted) else { continue };
        let labels = match gt.labels_for(&m.gt) {
            Some(l) if !l.is_empty() => l,
            _ => {
                skipped.push(m.gt.clone());
                notes.push(format!("no per-image labels for `{}`", m.gt));
                continue;
            }
        };
        let subs: Vec<&Substructure> = substructures
            .get(&criterion.criterion_id)
            .map(|v| v.iter().collect())
            .unwrap_or_default();
        if subs.is_empty() {
            skipped.push(m.gt.clone());
            notes.push(format!("no substructures for `{}`", criterion.criterion_id));
            continue;
        }
        let (best, cacc) = match select_best_granularity(&subs, labels) {
            Ok(x) => x,
            Err(MetricError::NoOverlap) => {
                skipped.push(m.gt.clone());
                notes.push(format!("labels for `{}` share no images with the run", m.gt));
                continue;
            }
            Err(e) => return Err(e),
        };
        let sacc = semantic_accuracy(best, labels, embedder)?;
        per_criterion.insert(
            criterion.criterion_id.clone(),
            CriterionScores {
                gt_criterion: m.gt.clone(),
                cacc,
                sacc,
                hm: harmonic_mean(cacc, sacc),
                chosen_granularity: best.granularity,
            },
        );
    }

    Ok(MetricReport {
        tpr,
        diversity,
        per_criterion,
        uncovered,
        skipped,
        matcher: matcher.mode(),
        notes,
    })
}

/// Tab-separated `criterion, gt_criterion, granularity, cacc, sacc, hm` rows.
pub fn summary_tsv(report: &MetricReport) -> String {
    let mut out = String::from("criterion\tgt_criterion\tgranularity\tcacc\tsacc\thm\n");
    for (id, s) in &report.per_criterion {
        out.push_str(&format!(
            "{id}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
            s.gt_criterion, s.chosen_granularity, s.cacc, s.sacc, s.hm
        ));
    }
    out
}
