mod common;

use std::collections::BTreeMap;

use common::{fixture_config, fixture_dir};
use semcluster::grouper::GroupingMode;
use semcluster::pipeline::{AnalysisKind, GroupIndex, PipelineError, Run};
use semcluster::types::Substructure;

fn open(out: &std::path::Path, run_id: &str) -> Run {
    Run::open(fixture_config(GroupingMode::Multi, 4, out), &fixture_dir(), Some(run_id.into()), false, None).unwrap()
}

fn json<T: serde::de::DeserializeOwned>(path: std::path::PathBuf) -> T {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

#[test]
fn stages_resume_from_artifacts_in_a_new_process() {
    let out = tempfile::tempdir().unwrap();
    {
        let mut run = open(out.path(), "resume");
        run.caption().unwrap();
        run.propose().unwrap();
    }
    let mut run = open(out.path(), "resume");
    let group = run.group(None).unwrap();
    assert!(group.errors.is_empty(), "{:?}", group.errors);
    // Captions and proposals are not redone when only grouping runs.
    let names: Vec<&str> = run.manifest.stages.iter().map(|s| s.command.name()).collect();
    assert_eq!(names, ["caption", "propose", "group"]);
    let index: GroupIndex = json(run.run_dir.join("group/index.json"));
    assert_eq!(index.substructures.len(), 3);
}

#[test]
fn a_run_directory_admits_one_owner() {
    let out = tempfile::tempdir().unwrap();
    let first = open(out.path(), "locked");
    let second = Run::open(fixture_config(GroupingMode::Multi, 4, out.path()), &fixture_dir(), Some("locked".into()), false, None);
    assert!(matches!(second, Err(PipelineError::Locked(_))), "{:?}", second.err());
    drop(first);
    open(out.path(), "locked");
}

#[test]
fn reopening_with_another_config_is_refused() {
    let out = tempfile::tempdir().unwrap();
    open(out.path(), "pinned").caption().unwrap();
    let mut cfg = fixture_config(GroupingMode::Multi, 4, out.path());
    cfg.seed = 99;
    let again = Run::open(cfg, &fixture_dir(), Some("pinned".into()), false, None);
    assert!(matches!(again, Err(PipelineError::Config(_))), "{:?}", again.err());
    // Parallelism does not change the outcome and may differ.
    let cfg = fixture_config(GroupingMode::Multi, 1, out.path());
    Run::open(cfg, &fixture_dir(), Some("pinned".into()), false, None).unwrap();
}

#[test]
fn a_failing_criterion_is_recorded_and_the_rest_complete() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(GroupingMode::Multi, 4, out.path());
    cfg.criteria = vec!["Activity".into(), "Weather".into()];
    let mut run = Run::open(cfg, &fixture_dir(), Some("partial".into()), false, None).unwrap();
    run.caption().unwrap();
    run.propose().unwrap();
    let rec = run.group(None).unwrap();
    assert_eq!(rec.errors.len(), 1, "{:?}", rec.errors);
    assert!(rec.errors[0].starts_with("weather"), "{:?}", rec.errors);
    let index: GroupIndex = json(run.run_dir.join("group/index.json"));
    assert!(index.substructures.contains_key("activity"));
    assert!(index.errors.contains_key("weather"));
}

#[test]
fn correlation_from_a_criterion_pair_and_a_label_file() {
    let out = tempfile::tempdir().unwrap();
    let mut run = open(out.path(), "corr");
    run.caption().unwrap();
    run.propose().unwrap();
    run.group(None).unwrap();

    run.analyze(AnalysisKind::Correlation, None, Some(("activity:fine".into(), "mood".into()))).unwrap();
    let result: serde_json::Value = json(run.run_dir.join("analyze/correlation.json"));
    let score = result["score"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&score));
    assert_eq!(result["source"], "substructures");

    let labels = out.path().join("labels.tsv");
    std::fs::write(&labels, "# attribute\ttarget\nday\tsun\nday\tsun\nnight\tmoon\nnight\tmoon\n").unwrap();
    run.analyze(AnalysisKind::Correlation, Some(labels), None).unwrap();
    let result: serde_json::Value = json(run.run_dir.join("analyze/correlation.json"));
    assert!((result["score"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let missing = run.analyze(AnalysisKind::Correlation, None, None);
    assert!(matches!(missing, Err(PipelineError::Config(_))));
}

#[test]
fn bias_and_popularity_cover_every_substructure() {
    let out = tempfile::tempdir().unwrap();
    let mut run = open(out.path(), "analytics");
    run.caption().unwrap();
    run.propose().unwrap();
    run.group(None).unwrap();
    run.analyze(AnalysisKind::Bias, None, None).unwrap();
    run.analyze(AnalysisKind::Popularity, None, None).unwrap();
    let index: GroupIndex = json(run.run_dir.join("group/index.json"));
    let subs: usize = index.substructures.values().map(Vec::len).sum();
    let bias: Vec<serde_json::Value> = json(run.run_dir.join("analyze/bias.json"));
    let pop: Vec<serde_json::Value> = json(run.run_dir.join("analyze/popularity.json"));
    assert_eq!(bias.len(), subs);
    assert_eq!(pop.len(), subs);
    // Mood at mid granularity is 48 joyful against 12 calm.
    let mood: BTreeMap<String, u64> = bias
        .iter()
        .find(|b| b["criterion_id"] == "mood" && b["granularity"] == "mid")
        .map(|b| serde_json::from_value(b["distribution"]["counts"].clone()).unwrap())
        .unwrap();
    assert_eq!(mood.values().copied().collect::<Vec<_>>(), [12, 48]);
    let sub: Substructure = json(run.run_dir.join(&index.substructures["mood"][1]));
    assert_eq!(sub.k(), 2);
}
