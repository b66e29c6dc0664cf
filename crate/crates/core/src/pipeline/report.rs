//! Markdown summary of a run's artifacts.
//!
//! The output depends only on artifact contents, so a replayed run renders
//! byte-identical reports.

use std::fmt::Write;
use std::path::Path;

use super::stages::{GroupIndex, BIAS, CORRELATION, GROUP_INDEX, METRIC_REPORT, POPULARITY, REFINED_CRITERIA};
use super::{read_json, PipelineError};
use crate::analytics::{BiasFinding, PopularityFinding};
use crate::proposer::Refinement;
use crate::types::{MetricReport, Substructure};

const BAR_WIDTH: usize = 30;

fn cell(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn histogram(out: &mut String, sub: &Substructure) {
    let mut sizes: Vec<(String, usize)> = sub
        .cluster_names
        .iter()
        .map(|n| (n.clone(), sub.assignments.values().filter(|v| *v == n).count()))
        .collect();
    sizes.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let max = sizes.iter().map(|s| s.1).max().unwrap_or(0).max(1);
    let width = sizes.iter().map(|s| s.0.chars().count()).max().unwrap_or(0);
    let _ = writeln!(out, "```");
    for (name, n) in &sizes {
        let bar = "#".repeat((n * BAR_WIDTH).div_ceil(max));
        let _ = writeln!(out, "{name:<width$}  {n:>5}  {bar}");
    }
    let _ = writeln!(out, "```");
}

pub(crate) fn render(run_dir: &Path, sources: &[&str]) -> Result<String, PipelineError> {
    let has = |rel: &str| sources.contains(&rel);
    let mut out = String::new();
    out.push_str("# Run report\n\n");

    if has(REFINED_CRITERIA) {
        let r: Refinement = read_json(&run_dir.join(REFINED_CRITERIA))?;
        let _ = writeln!(out, "## Criteria\n");
        let _ = writeln!(out, "| id | name | merged from |\n|---|---|---|");
        for c in &r.refined {
            let _ = writeln!(out, "| {} | {} | {} |", c.criterion_id, cell(&c.name), c.merged_from.len());
        }
        if !r.discarded.is_empty() {
            let names: Vec<&str> = r.discarded.iter().map(String::as_str).collect();
            let _ = writeln!(out, "\nDiscarded: {}", names.join(", "));
        }
        out.push('\n');
    }

    if has(GROUP_INDEX) {
        let index: GroupIndex = read_json(&run_dir.join(GROUP_INDEX))?;
        let _ = writeln!(out, "## Substructures ({} grouper)\n", index.grouper);
        for (crit, files) in &index.substructures {
            for f in files {
                let sub: Substructure = read_json(&run_dir.join(f))?;
                let _ = writeln!(
                    out,
                    "### {crit} / {}: {} clusters, {} unassigned\n",
                    sub.granularity,
                    sub.k(),
                    sub.unassigned_count()
                );
                histogram(&mut out, &sub);
                out.push('\n');
            }
        }
        if !index.errors.is_empty() {
            let _ = writeln!(out, "Failed criteria:\n");
            for (crit, e) in &index.errors {
                let _ = writeln!(out, "- {crit}: {}", cell(e));
            }
            out.push('\n');
        }
    }

    if has(METRIC_REPORT) {
        let m: MetricReport = read_json(&run_dir.join(METRIC_REPORT))?;
        let _ = writeln!(out, "## Evaluation ({} matcher)\n", m.matcher);
        let _ = writeln!(out, "- TPR: {:.4}", m.tpr);
        match m.diversity {
            Some(d) => {
                let _ = writeln!(out, "- Diversity: {d:.4}");
            }
            None => {
                let _ = writeln!(out, "- Diversity: n/a");
            }
        }
        let _ = writeln!(out, "\n| criterion | ground truth | level | CAcc | SAcc | HM |\n|---|---|---|---|---|---|");
        for (id, s) in &m.per_criterion {
            let _ = writeln!(
                out,
                "| {id} | {} | {} | {:.4} | {:.4} | {:.4} |",
                cell(&s.gt_criterion),
                s.chosen_granularity,
                s.cacc,
                s.sacc,
                s.hm
            );
        }
        if !m.uncovered.is_empty() {
            let _ = writeln!(out, "\nUncovered ground-truth criteria: {}", m.uncovered.join(", "));
        }
        out.push('\n');
    }

    if has(BIAS) {
        let findings: Vec<BiasFinding> = read_json(&run_dir.join(BIAS))?;
        let _ = writeln!(out, "## Bias\n");
        let _ = writeln!(out, "| criterion | level | intensity | dominant | share |\n|---|---|---|---|---|");
        for f in &findings {
            let total: u64 = f.distribution.counts.values().sum();
            let share = if total == 0 { 0.0 } else { f.dominant.count as f64 / total as f64 };
            let tie = if f.dominant.tied { " (tie)" } else { "" };
            let _ = writeln!(
                out,
                "| {} | {} | {:.4} | {}{tie} | {share:.3} |",
                f.criterion_id,
                f.granularity,
                f.intensity,
                cell(&f.dominant.name)
            );
        }
        out.push('\n');
    }

    if has(POPULARITY) {
        let findings: Vec<PopularityFinding> = read_json(&run_dir.join(POPULARITY))?;
        let _ = writeln!(out, "## Popularity\n");
        let _ = writeln!(out, "| criterion | level | viral | major | images |\n|---|---|---|---|---|");
        for f in &findings {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                f.criterion_id,
                f.granularity,
                cell(&f.viral),
                cell(&f.major),
                f.evaluated
            );
        }
        out.push('\n');
    }

    if has(CORRELATION) {
        let v: serde_json::Value = read_json(&run_dir.join(CORRELATION))?;
        let _ = writeln!(out, "## Correlation\n");
        let _ = writeln!(
            out,
            "{} vs {}: {:.4}\n",
            v["attribute"].as_str().unwrap_or("?"),
            v["target"].as_str().unwrap_or("?"),
            v["score"].as_f64().unwrap_or(f64::NAN)
        );
    }
    Ok(out)
}
