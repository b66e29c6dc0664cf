#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use semcluster::backends::BackendError;
use semcluster::grouper::GroupingMode;
use semcluster::metrics::Embedder;
use semcluster::parse::{
    extract_asterisk_span, parse_ampersand_list, parse_bulleted_list, parse_hierarchy, parse_vqa_triple,
};
use semcluster::pipeline::{PipelineConfig, Run, StageRecord};
use semcluster::types::{is_sentinel, Granularity, Substructure};
use serde::Deserialize;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy60")
}

/// Images on the best one-to-one mapping of predicted clusters to labels,
/// by trying every mapping.
pub fn brute_force_matched(pred: &Substructure, gt: &BTreeMap<String, String>) -> (u64, u64) {
    let mut clusters: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut images = 0;
    for (img, label) in gt {
        let Some(name) = pred.assignments.get(img) else { continue };
        images += 1;
        if is_sentinel(name) {
            continue;
        }
        let p = clusters.iter().position(|c| c == name).unwrap_or_else(|| {
            clusters.push(name.clone());
            clusters.len() - 1
        });
        let g = labels.iter().position(|l| l == label).unwrap_or_else(|| {
            labels.push(label.clone());
            labels.len() - 1
        });
        *counts.entry((p, g)).or_default() += 1;
    }
    fn search(p: usize, n: usize, used: &mut Vec<bool>, counts: &BTreeMap<(usize, usize), u64>) -> u64 {
        if p == n {
            return 0;
        }
        let mut best = search(p + 1, n, used, counts);
        for g in 0..used.len() {
            if !used[g] {
                used[g] = true;
                let here = counts.get(&(p, g)).copied().unwrap_or(0);
                best = best.max(here + search(p + 1, n, used, counts));
                used[g] = false;
            }
        }
        best
    }
    let mut used = vec![false; labels.len()];
    (search(0, clusters.len(), &mut used, &counts), images)
}

pub fn oracle_cacc(pred: &Substructure, gt: &BTreeMap<String, String>) -> f64 {
    let (m, n) = brute_force_matched(pred, gt);
    m as f64 / n as f64
}

pub fn substructure(criterion: &str, names: &[String]) -> Substructure {
    let ids: Vec<String> = (0..names.len()).map(|i| format!("i{i:03}")).collect();
    Substructure::from_assignments(criterion, Granularity::Mid, ids.iter().map(String::as_str).zip(names.iter().map(String::as_str)))
}

pub fn labels(names: &[String]) -> BTreeMap<String, String> {
    names.iter().enumerate().map(|(i, n)| (format!("i{i:03}"), n.clone())).collect()
}

/// Embeds by exact lookup; unknown texts are an error.
pub struct FixedEmbedder(pub BTreeMap<String, Vec<f64>>);

impl FixedEmbedder {
    pub fn new(pairs: &[(&str, Vec<f64>)]) -> Self {
        Self(pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect())
    }
}

impl Embedder for FixedEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                let v = self.0.get(t).ok_or_else(|| BackendError::Unscripted(t.clone()))?;
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                Ok(v.iter().map(|x| x / n).collect())
            })
            .collect()
    }
}

pub fn fixture_config(mode: GroupingMode, max_in_flight: usize, out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(&fixture_dir().join("config.toml")).expect("fixture config");
    cfg.grouper.mode = mode;
    cfg.max_in_flight = Some(max_in_flight);
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Runs every stage of the toy fixture into `<out>/<run_id>`.
pub fn run_fixture(out: &Path, run_id: &str, mode: GroupingMode, max_in_flight: usize) -> (PathBuf, Vec<StageRecord>) {
    let cfg = fixture_config(mode, max_in_flight, out);
    let mut run = Run::open(cfg, &fixture_dir(), Some(run_id.to_string()), false, None).expect("open run");
    let records = run.run_all().expect("fixture run");
    (run.run_dir.clone(), records)
}

pub fn output_digests(records: &[StageRecord]) -> BTreeMap<String, String> {
    records.iter().flat_map(|r| r.outputs.clone()).collect()
}

#[derive(Debug, Deserialize)]
pub struct CorpusCase {
    pub name: String,
    pub parser: String,
    pub input: String,
    pub cap: Option<usize>,
    #[serde(default)]
    pub ok: Option<serde_json::Value>,
    #[serde(default)]
    pub err: Option<String>,
}

pub fn corpus() -> Vec<CorpusCase> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/parser_corpus.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Checks one case; the error string names what differed.
pub fn check_case(c: &CorpusCase) -> Result<(), String> {
    let got: Result<serde_json::Value, String> = match c.parser.as_str() {
        "bullets" => parse_bulleted_list(&c.input).map(|v| serde_json::json!(v)).map_err(|e| format!("{e:?}")),
        "span" => extract_asterisk_span(&c.input).map(|v| serde_json::json!(v)).map_err(|e| format!("{e:?}")),
        "hierarchy" => parse_hierarchy(&c.input).map(|v| serde_json::json!(v)).map_err(|e| format!("{e:?}")),
        "vqa" => parse_vqa_triple(&c.input).map(|v| serde_json::json!(v)).map_err(|e| format!("{e:?}")),
        "ampersand" => {
            parse_ampersand_list(&c.input, c.cap.unwrap_or(10)).map(|v| serde_json::json!(v)).map_err(|e| format!("{e:?}"))
        }
        other => return Err(format!("unknown parser {other}")),
    };
    match (&c.ok, &c.err, got) {
        (Some(want), None, Ok(v)) if &v == want => Ok(()),
        (None, Some(want), Err(e)) if e.starts_with(want.as_str()) => Ok(()),
        (_, _, got) => Err(format!("{}: expected ok={:?} err={:?}, got {got:?}", c.name, c.ok, c.err)),
    }
}
