//! Offline re-execution of a recorded run against its response cache.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::manifest::RunManifest;
use super::stages::Run;
use super::PipelineError;
use crate::backends::BackendError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayedStage {
    pub stage: String,
    pub artifacts: usize,
    pub mismatched: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub original: PathBuf,
    pub replay: PathBuf,
    pub stages: Vec<ReplayedStage>,
    /// Transport calls made during the replay; zero when fully cached.
    pub transport_calls: u64,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.stages.iter().all(|s| s.mismatched.is_empty())
    }
}

/// Re-runs every recorded stage of `run_id` offline into `<run_id>-replay`
/// and compares each output digest with the original.
///
/// Refuses when the configuration digest differs from the recorded one. A
/// request absent from the cache fails the replay with its cache key.
pub fn replay_run(cfg: &PipelineConfig, base_dir: &Path, run_id: &str) -> Result<ReplayReport, PipelineError> {
    let original_dir = super::stages::resolve_dir(base_dir, &cfg.output_dir).join(run_id);
    let original = RunManifest::load(&original_dir)?;
    let digest = cfg.digest();
    if digest != original.config_digest {
        return Err(PipelineError::Config(format!(
            "config digest mismatch: run `{run_id}` recorded {}, current configuration is {digest}",
            original.config_digest
        )));
    }
    let replay_id = format!("{run_id}-replay");
    let replay_dir = original_dir.with_file_name(&replay_id);
    if replay_dir.exists() {
        std::fs::remove_dir_all(&replay_dir).map_err(super::io_err(&replay_dir))?;
    }
    let cache = original.cache_dir.clone().unwrap_or_else(|| original_dir.join("cache"));
    let mut run = Run::open(cfg.clone(), base_dir, Some(replay_id), true, Some(cache))?;

    let mut stages = Vec::new();
    for rec in &original.stages {
        let replayed = run.execute(&rec.command).map_err(|e| match e {
            PipelineError::Backend(BackendError::CacheMiss { digest: key }) => PipelineError::ReplayMismatch(format!(
                "{} stage requested an uncached response (cache key {key})",
                rec.command.name()
            )),
            other => other,
        })?;
        let mut mismatched = Vec::new();
        for (path, want) in &rec.outputs {
            if replayed.outputs.get(path) != Some(want) {
                mismatched.push(path.clone());
            }
        }
        for path in replayed.outputs.keys() {
            if !rec.outputs.contains_key(path) {
                mismatched.push(path.clone());
            }
        }
        stages.push(ReplayedStage { stage: rec.command.name().to_string(), artifacts: rec.outputs.len(), mismatched });
    }
    let report = ReplayReport {
        original: original_dir,
        replay: run.run_dir.clone(),
        stages,
        transport_calls: run.backends.call_counts().total(),
    };
    if !report.identical() {
        let list: Vec<String> = report
            .stages
            .iter()
            .flat_map(|s| s.mismatched.iter().map(move |m| format!("{}:{m}", s.stage)))
            .collect();
        return Err(PipelineError::ReplayMismatch(format!("artifacts differ: {}", list.join(", "))));
    }
    Ok(report)
}
