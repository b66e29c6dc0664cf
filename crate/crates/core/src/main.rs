use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use semcluster::grouper::{GrouperKind, GroupingMode};
use semcluster::pipeline::{replay_run, AnalysisKind, PipelineConfig, PipelineError, Run, StageRecord};
use semcluster::proposer::ProposerKind;

#[derive(Parser)]
#[command(name = "semcluster", version, about = "Discover grouping criteria in an image collection and cluster by them")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (TOML). Relative paths inside it resolve
    /// against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Directory holding run directories.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Serve every model request from the cache.
    #[arg(long, global = true)]
    offline: bool,
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    sample_fraction: Option<f64>,
    #[arg(long, global = true)]
    proposer: Option<ProposerKind>,
    #[arg(long, global = true)]
    grouper: Option<GrouperKind>,
    #[arg(long, global = true)]
    mode: Option<GroupingMode>,
    #[arg(long, global = true)]
    subset_size: Option<usize>,
    #[arg(long, global = true)]
    grid_side: Option<usize>,
    #[arg(long, global = true)]
    tag_k: Option<usize>,
    #[arg(long, global = true)]
    tpr_threshold: Option<f64>,
    #[arg(long, global = true)]
    snap_floor: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generic captions for the discovery set.
    Caption,
    /// Propose and refine criteria.
    Propose,
    /// Group the collection by each criterion.
    Group {
        /// Criterion ids or names (default: all refined criteria).
        #[arg(long, num_args = 1..)]
        criteria: Option<Vec<String>>,
    },
    /// Score criteria and substructures against ground truth.
    Evaluate {
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Bias, correlation or popularity analysis.
    Analyze {
        kind: AnalysisKind,
        /// Two-column label file for correlation.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Attribute and target criteria, each `id` or `id:granularity`.
        #[arg(long, num_args = 2, value_names = ["ATTRIBUTE", "TARGET"])]
        pair: Option<Vec<String>>,
    },
    /// Re-execute a recorded run offline and compare artifacts.
    Replay,
    /// Render the run summary.
    Report,
    /// Every applicable stage in order.
    Run,
}

fn load_config(g: &Global) -> Result<(PipelineConfig, PathBuf), PipelineError> {
    let (mut cfg, base) = match &g.config {
        Some(path) => {
            let cfg = PipelineConfig::load(path)?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, if base.as_os_str().is_empty() { PathBuf::from(".") } else { base })
        }
        None => (PipelineConfig::default(), PathBuf::from(".")),
    };
    if let Some(v) = &g.output {
        cfg.output_dir = std::env::current_dir().map(|d| d.join(v)).unwrap_or_else(|_| v.clone());
    }
    if let Some(v) = g.max_in_flight {
        cfg.max_in_flight = Some(v);
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.sample_fraction {
        cfg.proposer.sample_fraction = v;
    }
    if let Some(v) = g.proposer {
        cfg.proposer.kind = v;
    }
    if let Some(v) = g.grouper {
        cfg.grouper.kind = v;
    }
    if let Some(v) = g.mode {
        cfg.grouper.mode = v;
    }
    if let Some(v) = g.subset_size {
        cfg.proposer.subset_size = v;
    }
    if let Some(v) = g.grid_side {
        cfg.proposer.grid_side = v;
    }
    if let Some(v) = g.tag_k {
        cfg.proposer.tag_k = v;
    }
    if let Some(v) = g.tpr_threshold {
        cfg.thresholds.tpr_match = v;
    }
    if let Some(v) = g.snap_floor {
        cfg.thresholds.snap_floor = v;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn print_record(rec: &StageRecord) {
    println!(
        "{}: {} artifacts, {} model calls, {} item failures, {} warnings",
        rec.command.name(),
        rec.outputs.len(),
        rec.calls.total(),
        rec.item_failures,
        rec.warnings.len()
    );
    for e in &rec.errors {
        eprintln!("  error: {e}");
    }
}

/// Stage records with per-criterion errors count as failed runs.
fn check(records: &[StageRecord]) -> Result<(), PipelineError> {
    for rec in records {
        if !rec.errors.is_empty() {
            return Err(PipelineError::PartialFailure {
                stage: rec.command.name(),
                count: rec.errors.len(),
                names: rec.errors.iter().map(|e| e.split(':').next().unwrap_or(e)).collect::<Vec<_>>().join(", "),
            });
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let (cfg, base) = load_config(&cli.global)?;
    if let Command::Replay = cli.command {
        let run_id = cli
            .global
            .run_id
            .clone()
            .or_else(|| cfg.run_id.clone())
            .ok_or_else(|| PipelineError::Config("replay needs --run-id".into()))?;
        let report = replay_run(&cfg, &base, &run_id)?;
        for s in &report.stages {
            println!("{}: {} artifacts identical", s.stage, s.artifacts);
        }
        println!("replay written to {} with {} transport calls", report.replay.display(), report.transport_calls);
        return Ok(());
    }
    let mut run = Run::open(cfg, &base, cli.global.run_id.clone(), cli.global.offline, None)?;
    log::info!("run directory {}", run.run_dir.display());
    let records = match cli.command {
        Command::Caption => vec![run.caption()?],
        Command::Propose => vec![run.propose()?],
        Command::Group { criteria } => vec![run.group(criteria)?],
        Command::Evaluate { gt } => vec![run.evaluate(gt)?],
        Command::Analyze { kind, labels, pair } => {
            let pair = pair.map(|mut p| {
                let y = p.pop().unwrap_or_default();
                (p.pop().unwrap_or_default(), y)
            });
            vec![run.analyze(kind, labels, pair)?]
        }
        Command::Report => vec![run.report()?],
        Command::Run => run.run_all()?,
        Command::Replay => unreachable!(),
    };
    for rec in &records {
        print_record(rec);
    }
    println!("run directory: {}", run.run_dir.display());
    check(&records)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
