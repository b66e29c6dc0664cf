//! The pipeline stages over one run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{MatcherKind, PipelineConfig};
use super::manifest::{digests, now, RunManifest, Seeds, StageCommand, StageRecord};
use super::{file_digest, read_json, read_jsonl, report, write_atomic, write_json, write_jsonl, PipelineError, RunLock};
use crate::analytics::{
    bias_report, bias_tsv, popularity_analysis, popularity_tsv, spurious_correlation, JointDistribution,
};
use crate::backends::{Backends, CallCounts};
use crate::dataset::{load_collection, load_ground_truth, load_vocabulary};
use crate::exec::ItemFailure;
use crate::grouper::{
    build_tag_hierarchy, group_by_captions, group_by_tags, group_by_vqa, vqa_question_for_criterion, GroupOptions,
    GrouperError, GrouperKind, GroupingOutcome,
};
use crate::metrics::{evaluate_run, summary_tsv, CriterionMatcher, EmbeddingMatcher, EvalOptions, LlmJudgeMatcher};
use crate::proposer::{
    generate_generic_captions, propose_from_captions, propose_from_image_grids, propose_from_tags,
    refine_criteria_pool, sample_uniform, tag_collection, CaptionOptions, GridOptions, ProposeOptions, ProposerKind,
    ProposerRun, RefineOptions, Refinement, TagProposeOptions,
};
use crate::types::{CaptionRecord, Collection, Criterion, Granularity, Substructure};

pub const CAPTIONS: &str = "caption/captions.jsonl";
pub const CAPTION_FAILURES: &str = "caption/failures.json";
pub const TAGS: &str = "propose/tags.jsonl";
pub const RAW_CRITERIA: &str = "propose/raw_criteria.json";
pub const REFINED_CRITERIA: &str = "propose/refined_criteria.json";
pub const GROUP_INDEX: &str = "group/index.json";
pub const METRIC_REPORT: &str = "evaluate/metric_report.json";
pub const METRIC_SUMMARY: &str = "evaluate/summary.tsv";
pub const BIAS: &str = "analyze/bias.json";
pub const BIAS_TSV: &str = "analyze/bias.tsv";
pub const POPULARITY: &str = "analyze/popularity.json";
pub const POPULARITY_TSV: &str = "analyze/popularity.tsv";
pub const CORRELATION: &str = "analyze/correlation.json";
pub const REPORT: &str = "report/report.md";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Bias,
    Correlation,
    Popularity,
}

impl FromStr for AnalysisKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bias" => Ok(AnalysisKind::Bias),
            "correlation" => Ok(AnalysisKind::Correlation),
            "popularity" => Ok(AnalysisKind::Popularity),
            other => Err(format!("unknown analysis `{other}` (bias, correlation, popularity)")),
        }
    }
}

/// Which criteria were grouped and where their substructures are.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupIndex {
    pub grouper: String,
    /// Criterion id → substructure artifact paths, coarse to fine.
    pub substructures: BTreeMap<String, Vec<String>>,
    /// Criterion id → error message.
    pub errors: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StageNotes {
    warnings: Vec<String>,
    failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone, Serialize)]
struct CorrelationResult {
    source: String,
    attribute: String,
    target: String,
    score: f64,
    joint: JointDistribution,
}

/// Collects a stage's inputs, outputs and notes.
struct StageCtx<'a> {
    run_dir: &'a Path,
    inputs: Vec<String>,
    external: BTreeMap<String, String>,
    outputs: Vec<String>,
    warnings: Vec<String>,
    item_failures: usize,
    errors: Vec<String>,
}

impl StageCtx<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.run_dir.join(rel)
    }

    fn input<T: serde::de::DeserializeOwned>(&mut self, rel: &str) -> Result<T, PipelineError> {
        let v = read_json(&self.path(rel))?;
        self.inputs.push(rel.to_string());
        Ok(v)
    }

    fn input_lines<T: serde::de::DeserializeOwned>(&mut self, rel: &str) -> Result<Vec<T>, PipelineError> {
        let v = read_jsonl(&self.path(rel))?;
        self.inputs.push(rel.to_string());
        Ok(v)
    }

    fn external(&mut self, label: &str, path: &Path) -> Result<(), PipelineError> {
        self.external.insert(format!("@{label}"), file_digest(path)?);
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, rel: &str, v: &T) -> Result<(), PipelineError> {
        write_json(&self.path(rel), v)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn lines<T: Serialize>(&mut self, rel: &str, rows: &[T]) -> Result<(), PipelineError> {
        write_jsonl(&self.path(rel), rows)?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<(), PipelineError> {
        write_atomic(&self.path(rel), text.as_bytes())?;
        self.outputs.push(rel.to_string());
        Ok(())
    }

    fn failures(&mut self, f: &[ItemFailure]) {
        self.item_failures += f.len();
    }
}

/// An open run: configuration, clients, manifest and the directory lock.
pub struct Run {
    pub cfg: PipelineConfig,
    pub base_dir: PathBuf,
    pub run_dir: PathBuf,
    pub backends: Backends,
    pub manifest: RunManifest,
    _lock: RunLock,
}

pub(crate) fn resolve_dir(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Run {
    /// Opens (or creates) the run directory `<output>/<run_id>`.
    ///
    /// `cache_dir` overrides the configured cache, which otherwise defaults
    /// to `<run_dir>/cache`. An existing run created under a different
    /// configuration digest is refused.
    pub fn open(
        cfg: PipelineConfig,
        base_dir: &Path,
        run_id: Option<String>,
        offline: bool,
        cache_dir: Option<PathBuf>,
    ) -> Result<Self, PipelineError> {
        cfg.validate()?;
        let run_id = run_id
            .or_else(|| cfg.run_id.clone())
            .unwrap_or_else(|| chrono::Utc::now().format("run-%Y%m%d-%H%M%S").to_string());
        let run_dir = resolve_dir(base_dir, &cfg.output_dir).join(&run_id);
        let lock = RunLock::acquire(&run_dir)?;

        let cache = cache_dir
            .or_else(|| cfg.backends.cache_dir.as_ref().map(|p| resolve_dir(base_dir, p)))
            .unwrap_or_else(|| run_dir.join("cache"));
        let mut bcfg = cfg.backends.clone();
        bcfg.set_max_in_flight(cfg.parallelism());
        let backends = bcfg.build(base_dir, Some(&cache), offline)?;

        let digest = cfg.digest();
        let manifest = match RunManifest::load(&run_dir) {
            Ok(m) if m.config_digest != digest => {
                return Err(PipelineError::Config(format!(
                    "run `{run_id}` was created with configuration {}, current is {digest}",
                    m.config_digest
                )))
            }
            Ok(mut m) => {
                m.backends = backends.identities();
                m.offline = offline;
                m
            }
            Err(PipelineError::MissingArtifact(_)) => RunManifest {
                run_id: run_id.clone(),
                config_digest: digest,
                seeds: Seeds { shuffle: cfg.seed, sample: cfg.seed, tag_sampling: cfg.seed },
                backends: backends.identities(),
                cache_dir: Some(cache.clone()),
                offline,
                created: now(),
                updated: now(),
                stages: Vec::new(),
                warnings: Vec::new(),
            },
            Err(e) => return Err(e),
        };
        Ok(Self { cfg, base_dir: base_dir.to_path_buf(), run_dir, backends, manifest, _lock: lock })
    }

    fn collection_path(&self) -> PathBuf {
        resolve_dir(&self.base_dir, &self.cfg.collection)
    }

    fn collection(&self) -> Result<Collection, PipelineError> {
        Ok(load_collection(&self.collection_path())?)
    }

    fn discovery_set(&self, collection: &Collection) -> Result<Collection, PipelineError> {
        let recs = sample_uniform(collection.records(), self.cfg.proposer.sample_fraction, self.manifest.seeds.sample);
        crate::types::validate_collection(recs).map_err(|e| PipelineError::Config(e.to_string()))
    }

    fn stage(
        &mut self,
        command: StageCommand,
        body: impl FnOnce(&Self, &mut StageCtx) -> Result<(), PipelineError>,
    ) -> Result<StageRecord, PipelineError> {
        let started = now();
        let before = self.backends.call_counts();
        let mut ctx = StageCtx {
            run_dir: &self.run_dir,
            inputs: Vec::new(),
            external: BTreeMap::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            item_failures: 0,
            errors: Vec::new(),
        };
        body(self, &mut ctx)?;
        let after = self.backends.call_counts();
        let mut inputs = digests(&self.run_dir, &ctx.inputs)?;
        inputs.extend(ctx.external);
        let rec = StageRecord {
            command,
            started,
            finished: now(),
            inputs,
            outputs: digests(&self.run_dir, &ctx.outputs)?,
            calls: CallCounts {
                chat: after.chat - before.chat,
                embed: after.embed - before.embed,
                vision: after.vision - before.vision,
                tag: after.tag - before.tag,
            },
            warnings: ctx.warnings,
            item_failures: ctx.item_failures,
            errors: ctx.errors,
        };
        self.manifest.record(rec.clone());
        let dir = self.run_dir.clone();
        self.manifest.save(&dir)?;
        Ok(rec)
    }

    fn caption_options(&self) -> CaptionOptions {
        CaptionOptions {
            max_tokens: self.cfg.proposer.caption_max_tokens,
            failure_threshold: self.cfg.thresholds.failure_fraction,
            workers: self.cfg.parallelism(),
        }
    }

    pub fn group_options(&self) -> GroupOptions {
        let g = &self.cfg.grouper;
        GroupOptions {
            mode: g.mode,
            snap_floor: self.cfg.thresholds.snap_floor,
            max_name_words: g.max_name_words,
            caption_max_tokens: g.caption_max_tokens,
            name_max_tokens: g.name_max_tokens,
            hierarchy_max_tokens: g.hierarchy_max_tokens,
            assign_max_tokens: g.assign_max_tokens,
            hierarchy_retries: g.hierarchy_retries,
            workers: self.cfg.parallelism(),
            failure_threshold: self.cfg.thresholds.failure_fraction,
            caption_prompt: g.caption_prompt.clone(),
            tag_samples: g.tag_samples,
            seed: self.manifest.seeds.tag_sampling,
        }
    }

    /// Generic captions for the discovery set.
    pub fn caption(&mut self) -> Result<StageRecord, PipelineError> {
        self.stage(StageCommand::Caption, |run, ctx| {
            ctx.external("collection", &run.collection_path())?;
            let set = run.discovery_set(&run.collection()?)?;
            let batch = generate_generic_captions(&run.backends, &set, &run.caption_options())?;
            ctx.failures(&batch.failures);
            ctx.lines(CAPTIONS, &batch.captions)?;
            ctx.json(CAPTION_FAILURES, &batch.failures)
        })
    }

    /// Raw criteria from the configured proposer, then refinement. With
    /// `criteria` set in the configuration, those are used as given.
    pub fn propose(&mut self) -> Result<StageRecord, PipelineError> {
        self.stage(StageCommand::Propose, |run, ctx| {
            if !run.cfg.criteria.is_empty() {
                let refined = run
                    .cfg
                    .criteria
                    .iter()
                    .map(|n| Criterion::user_supplied(n))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                return ctx.json(REFINED_CRITERIA, &Refinement { refined, discarded: Vec::new(), warnings: Vec::new() });
            }
            let p = &run.cfg.proposer;
            let workers = run.cfg.parallelism();
            let seed = run.manifest.seeds.shuffle;
            let proposal: ProposerRun = match p.kind {
                ProposerKind::Caption => {
                    let captions: Vec<CaptionRecord> = ctx.input_lines(CAPTIONS)?;
                    let opts = ProposeOptions {
                        seed,
                        subset_size: p.subset_size,
                        criteria_per_subset: p.criteria_per_subset,
                        max_tokens: p.propose_max_tokens,
                        workers,
                    };
                    propose_from_captions(&run.backends, &captions, &opts)?
                }
                ProposerKind::Tag => {
                    let vocab_path = run
                        .cfg
                        .vocabulary
                        .as_ref()
                        .map(|v| resolve_dir(&run.base_dir, v))
                        .ok_or_else(|| PipelineError::Config("the tag proposer needs `vocabulary`".into()))?;
                    ctx.external("collection", &run.collection_path())?;
                    ctx.external("vocabulary", &vocab_path)?;
                    let vocab = load_vocabulary(&vocab_path)?;
                    let set = run.discovery_set(&run.collection()?)?;
                    let batch = tag_collection(&run.backends, &set, &vocab, p.tag_k, workers, run.cfg.thresholds.failure_fraction)?;
                    ctx.failures(&batch.failures);
                    ctx.lines(TAGS, &batch.records)?;
                    let opts = TagProposeOptions {
                        token_budget: p.token_budget,
                        tags_per_image: p.tag_k,
                        max_tokens: p.propose_max_tokens,
                        workers,
                        seed,
                    };
                    propose_from_tags(&run.backends, &batch.records, &opts)?
                }
                ProposerKind::Image => {
                    ctx.external("collection", &run.collection_path())?;
                    let set = run.discovery_set(&run.collection()?)?;
                    let opts = GridOptions {
                        seed,
                        grid_side: p.grid_side,
                        tile_size: p.tile_size,
                        criteria_per_grid: p.criteria_per_grid,
                        max_tokens: p.propose_max_tokens,
                        workers,
                        failure_threshold: run.cfg.thresholds.failure_fraction,
                        grid_dir: ctx.path("propose/grids"),
                    };
                    propose_from_image_grids(&run.backends, &set, &opts)?
                }
            };
            ctx.failures(&proposal.failures);
            ctx.json(RAW_CRITERIA, &proposal)?;
            let ropts = RefineOptions { lineage_floor: run.cfg.thresholds.lineage_floor, max_tokens: p.refine_max_tokens };
            let refinement = refine_criteria_pool(&run.backends, &run.backends, &proposal.raw_criteria, &ropts)?;
            ctx.warnings.extend(refinement.warnings.iter().cloned());
            ctx.json(REFINED_CRITERIA, &refinement)
        })
    }

    /// Substructures for every refined criterion (or the selected ids or
    /// names). Errors confined to one criterion are recorded and the others
    /// continue.
    pub fn group(&mut self, selection: Option<Vec<String>>) -> Result<StageRecord, PipelineError> {
        let command = StageCommand::Group { criteria: selection.clone() };
        self.stage(command, |run, ctx| {
            let refinement: Refinement = ctx.input(REFINED_CRITERIA)?;
            ctx.external("collection", &run.collection_path())?;
            let collection = run.collection()?;
            let chosen: Vec<&Criterion> = match &selection {
                None => refinement.refined.iter().collect(),
                Some(sel) => {
                    let picked: Vec<&Criterion> = refinement
                        .refined
                        .iter()
                        .filter(|c| sel.iter().any(|s| s == &c.criterion_id || crate::types::names_equal(s, &c.name)))
                        .collect();
                    if picked.len() != sel.len() {
                        return Err(PipelineError::Config(format!("unknown criteria in selection {sel:?}")));
                    }
                    picked
                }
            };
            let opts = run.group_options();
            let kind = run.cfg.grouper.kind;
            let mut index = GroupIndex { grouper: kind.as_str().to_string(), ..Default::default() };
            for c in chosen {
                match group_one(&run.backends, &collection, c, kind, &opts) {
                    Ok(out) => {
                        let files = write_outcome(ctx, &out)?;
                        index.substructures.insert(c.criterion_id.clone(), files);
                    }
                    Err(e) if e.is_per_criterion() => {
                        ctx.errors.push(format!("{}: {e}", c.criterion_id));
                        index.errors.insert(c.criterion_id.clone(), e.to_string());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            ctx.json(GROUP_INDEX, &index)
        })
    }

    fn load_substructures(ctx: &mut StageCtx) -> Result<BTreeMap<String, Vec<Substructure>>, PipelineError> {
        let index: GroupIndex = ctx.input(GROUP_INDEX)?;
        let mut out = BTreeMap::new();
        for (crit, files) in &index.substructures {
            let subs = files.iter().map(|f| ctx.input(f)).collect::<Result<Vec<Substructure>, _>>()?;
            out.insert(crit.clone(), subs);
        }
        Ok(out)
    }

    /// Metric report against ground truth.
    pub fn evaluate(&mut self, ground_truth: Option<PathBuf>) -> Result<StageRecord, PipelineError> {
        let command = StageCommand::Evaluate { ground_truth: ground_truth.clone() };
        self.stage(command, |run, ctx| {
            let gt_path = ground_truth
                .as_ref()
                .or(run.cfg.ground_truth.as_ref())
                .map(|p| resolve_dir(&run.base_dir, p))
                .ok_or_else(|| PipelineError::Config("no ground truth given".into()))?;
            ctx.external("ground_truth", &gt_path)?;
            let gt = load_ground_truth(&gt_path)?;
            let refinement: Refinement = ctx.input(REFINED_CRITERIA)?;
            let subs = Self::load_substructures(ctx)?;
            let embedding = EmbeddingMatcher { embedder: &run.backends };
            let judge = LlmJudgeMatcher { backends: &run.backends };
            let matcher: &dyn CriterionMatcher = match run.cfg.matcher {
                MatcherKind::Embedding => &embedding,
                MatcherKind::LlmJudge => &judge,
            };
            let opts = EvalOptions { tpr_threshold: run.cfg.thresholds.tpr_match };
            let report = evaluate_run(&refinement.refined, &subs, &gt, matcher, &run.backends, opts)?;
            ctx.json(METRIC_REPORT, &report)?;
            ctx.text(METRIC_SUMMARY, &summary_tsv(&report))
        })
    }

    /// One analysis over the grouped substructures (or a label file).
    pub fn analyze(
        &mut self,
        kind: AnalysisKind,
        labels: Option<PathBuf>,
        pair: Option<(String, String)>,
    ) -> Result<StageRecord, PipelineError> {
        let command = StageCommand::Analyze { kind, labels: labels.clone(), pair: pair.clone() };
        self.stage(command, |run, ctx| {
            let include = run.cfg.analysis.include_sentinel;
            match kind {
                AnalysisKind::Bias => {
                    let subs = Self::load_substructures(ctx)?;
                    let mut usable = Vec::new();
                    for s in subs.values().flatten() {
                        match s.distribution(include) {
                            Ok(_) => usable.push(s),
                            Err(e) => ctx.warnings.push(format!("{} {}: skipped ({e})", s.criterion_id, s.granularity)),
                        }
                    }
                    let findings = bias_report(&usable, include)?;
                    ctx.json(BIAS, &findings)?;
                    ctx.text(BIAS_TSV, &bias_tsv(&findings))
                }
                AnalysisKind::Popularity => {
                    ctx.external("collection", &run.collection_path())?;
                    let collection = run.collection()?;
                    let subs = Self::load_substructures(ctx)?;
                    let mut findings = Vec::new();
                    for s in subs.values().flatten() {
                        findings.push(popularity_analysis(s, &collection, run.cfg.thresholds.popularity_missing)?);
                    }
                    ctx.json(POPULARITY, &findings)?;
                    ctx.text(POPULARITY_TSV, &popularity_tsv(&findings))
                }
                AnalysisKind::Correlation => {
                    let result = match (&labels, &pair) {
                        (Some(path), _) => {
                            let path = resolve_dir(&run.base_dir, path);
                            ctx.external("labels", &path)?;
                            let text = std::fs::read_to_string(&path).map_err(super::io_err(&path))?;
                            let joint = JointDistribution::from_label_file(&text)?;
                            CorrelationResult {
                                source: "label_file".into(),
                                attribute: "column 1".into(),
                                target: "column 2".into(),
                                score: spurious_correlation(&joint)?,
                                joint,
                            }
                        }
                        (None, Some((a, y))) => {
                            let subs = Self::load_substructures(ctx)?;
                            let sa = pick_substructure(&subs, a)?;
                            let sy = pick_substructure(&subs, y)?;
                            let joint = JointDistribution::from_substructures(sa, sy, include)?;
                            CorrelationResult {
                                source: "substructures".into(),
                                attribute: a.clone(),
                                target: y.clone(),
                                score: spurious_correlation(&joint)?,
                                joint,
                            }
                        }
                        (None, None) => {
                            return Err(PipelineError::Config("correlation needs a label file or a criterion pair".into()))
                        }
                    };
                    ctx.json(CORRELATION, &result)
                }
            }
        })
    }

    /// Static summary document over whatever artifacts exist.
    pub fn report(&mut self) -> Result<StageRecord, PipelineError> {
        self.stage(StageCommand::Report, |run, ctx| {
            let mut sources = Vec::new();
            for rel in [REFINED_CRITERIA, GROUP_INDEX, METRIC_REPORT, BIAS, POPULARITY, CORRELATION] {
                if ctx.path(rel).exists() {
                    sources.push(rel);
                }
            }
            let text = report::render(&run.run_dir, &sources)?;
            for rel in &sources {
                ctx.inputs.push(rel.to_string());
            }
            ctx.text(REPORT, &text)
        })
    }

    pub fn execute(&mut self, command: &StageCommand) -> Result<StageRecord, PipelineError> {
        match command.clone() {
            StageCommand::Caption => self.caption(),
            StageCommand::Propose => self.propose(),
            StageCommand::Group { criteria } => self.group(criteria),
            StageCommand::Evaluate { ground_truth } => self.evaluate(ground_truth),
            StageCommand::Analyze { kind, labels, pair } => self.analyze(kind, labels, pair),
            StageCommand::Report => self.report(),
        }
    }

    /// Every stage the configuration supports, in order.
    pub fn run_all(&mut self) -> Result<Vec<StageRecord>, PipelineError> {
        let mut out = Vec::new();
        if self.cfg.criteria.is_empty() && self.cfg.proposer.kind == ProposerKind::Caption {
            out.push(self.caption()?);
        }
        out.push(self.propose()?);
        out.push(self.group(None)?);
        if self.cfg.ground_truth.is_some() {
            out.push(self.evaluate(None)?);
        }
        out.push(self.analyze(AnalysisKind::Bias, None, None)?);
        if self.collection()?.records().iter().any(|r| r.popularity.is_some()) {
            out.push(self.analyze(AnalysisKind::Popularity, None, None)?);
        }
        out.push(self.report()?);
        Ok(out)
    }
}

/// `criterion_id` or `criterion_id:granularity` (mid by default).
fn pick_substructure<'a>(
    subs: &'a BTreeMap<String, Vec<Substructure>>,
    spec: &str,
) -> Result<&'a Substructure, PipelineError> {
    let (id, g) = match spec.rsplit_once(':') {
        Some((id, g)) => (id, Granularity::from_str(g).map_err(|e| PipelineError::Config(e.to_string()))?),
        None => (spec, Granularity::Mid),
    };
    let list = subs.get(id).ok_or_else(|| PipelineError::Config(format!("criterion `{id}` was not grouped")))?;
    list.iter()
        .find(|s| s.granularity == g)
        .or_else(|| (list.len() == 1).then(|| &list[0]))
        .ok_or_else(|| PipelineError::Config(format!("criterion `{id}` has no {g} substructure")))
}

fn group_one(
    b: &Backends,
    collection: &Collection,
    c: &Criterion,
    kind: GrouperKind,
    opts: &GroupOptions,
) -> Result<GroupingOutcome, GrouperError> {
    match kind {
        GrouperKind::Caption => group_by_captions(b, collection, c, opts),
        GrouperKind::Vqa => {
            let q = vqa_question_for_criterion(b, c, opts)?;
            group_by_vqa(b, collection, &q, opts)
        }
        GrouperKind::Tag => {
            let (h, warnings) = build_tag_hierarchy(b, c, opts)?;
            let mut out = group_by_tags(b, collection, &h, opts)?;
            out.warnings.splice(0..0, warnings);
            Ok(out)
        }
    }
}

/// Writes one criterion's artifacts and returns its substructure paths.
fn write_outcome(ctx: &mut StageCtx, out: &GroupingOutcome) -> Result<Vec<String>, PipelineError> {
    let dir = format!("group/{}", out.criterion_id);
    if !out.captions.is_empty() {
        ctx.lines(&format!("{dir}/captions.jsonl"), &out.captions)?;
    }
    if let Some(v) = &out.initial {
        ctx.json(&format!("{dir}/initial_names.json"), v)?;
    }
    if let Some(v) = &out.hierarchy {
        ctx.json(&format!("{dir}/hierarchy.json"), v)?;
    }
    if let Some(v) = &out.flat_candidates {
        ctx.json(&format!("{dir}/flat_candidates.json"), v)?;
    }
    if let Some(v) = &out.question {
        ctx.json(&format!("{dir}/vqa_question.json"), v)?;
    }
    if let Some(v) = &out.tag_hierarchy {
        ctx.json(&format!("{dir}/tag_hierarchy.json"), v)?;
    }
    let mut files = Vec::new();
    for s in &out.substructures {
        let rel = format!("{dir}/substructure_{}.json", s.granularity);
        ctx.json(&rel, s)?;
        files.push(rel);
    }
    ctx.failures(&out.failures);
    ctx.warnings.extend(out.warnings.iter().map(|w| format!("{}: {w}", out.criterion_id)));
    ctx.json(&format!("{dir}/notes.json"), &StageNotes { warnings: out.warnings.clone(), failures: out.failures.clone() })?;
    Ok(files)
}
