//! Command-line pipeline: `gen`, `train`, `influence`, `report` and
//! `check-grad`, all driven by one experiment config file.

mod config;
mod manifest;
mod pipeline;
mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    parse_curve_spec, CheckpointPolicy, CorpusSection, DirectionPolicy, ExperimentConfig, InfluenceSection,
    ModelSection, NoiseSection, OutputSection, ReportSection, TrainSection,
};
pub use manifest::{list_files, sha256_file, FileEntry, RunManifest, MANIFEST_FILE};
pub use pipeline::{
    cmd_check_grad, cmd_gen, cmd_influence, cmd_train, configured_targets, ranking_file, target_name, CheckpointList,
    GenSummary, GradCheckRun, GradCheckSummary, InfluenceSummary, ProbeFile, RankingMeta, RunPaths, Subsets,
    TargetFilter, TargetSummary, TrainSummary, GRAD_CHECK_TOLERANCE,
};
pub use report::{build_report, cmd_report, render_text, ElbowSummary, Report, SensitivityReport};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_MISSING: i32 = 3;
pub const EXIT_INCOMPLETE: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::InvalidConfig(_) => EXIT_VALIDATION,
        Error::MissingPrerequisite(_) => EXIT_MISSING,
        Error::Incomplete(_) => EXIT_INCOMPLETE,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gradsieve",
    version,
    about = "TracIn-based instance-specific data filtering on a toy translation task"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate clean and poisoned corpora, the noise manifest and probe sources.
    Gen(CommonArgs),
    /// Train the model and keep the selected checkpoints.
    Train(CommonArgs),
    /// Build the gradient cache and write influence rankings.
    Influence(InfluenceArgs),
    /// Evaluate rankings and write reports.
    Report(CommonArgs),
    /// Finite-difference check of the backward pass.
    CheckGrad(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; overrides the config's output.dir.
    #[arg(long, env = "GRADSIEVE_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads for gradient caching and scoring.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Only this error pattern.
    #[arg(long, conflicts_with = "copy_mode")]
    pub pattern: Option<u32>,
    /// Only copied-source probes.
    #[arg(long)]
    pub copy_mode: bool,
}

fn load(args: &CommonArgs) -> crate::Result<(ExperimentConfig, PathBuf, usize)> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let workers = args.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    Ok((cfg, out, workers))
}

/// Runs one command and prints a short summary; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Gen(a) => load(&a).and_then(|(cfg, out, _)| {
            let s = cmd_gen(&cfg, &out)?;
            println!("generated {} training examples ({} noisy) in {}", s.n_train, s.n_noisy, out.display());
            Ok(EXIT_OK)
        }),
        Command::Train(a) => load(&a).and_then(|(cfg, out, _)| {
            let s = cmd_train(&cfg, &out)?;
            let last = s.history.epochs.last().map_or(f64::NAN, |e| e.val_loss);
            println!(
                "trained {} epochs (final val loss {last:.4}), checkpoints {:?}",
                s.history.epochs.len(),
                s.epochs
            );
            Ok(EXIT_OK)
        }),
        Command::Influence(a) => load(&a.common).and_then(|(cfg, out, workers)| {
            let filter = match (a.pattern, a.copy_mode) {
                (Some(id), _) => TargetFilter::Pattern(id),
                (None, true) => TargetFilter::Copy,
                (None, false) => TargetFilter::All,
            };
            let s = cmd_influence(&cfg, &out, filter, workers)?;
            println!("gradient cache: {} computed, {} reused", s.cache.computed, s.cache.reused);
            for t in &s.targets {
                println!(
                    "{}: {} probes ({} dropped), subset {}, {} rankings",
                    t.target, t.probes, t.dropped, t.subset, t.rankings
                );
            }
            Ok(EXIT_OK)
        }),
        Command::Report(a) => load(&a).and_then(|(cfg, out, _)| {
            let r = cmd_report(&cfg, &out);
            let text = RunPaths::new(&out).report("report.txt");
            if let Ok(t) = std::fs::read_to_string(&text) {
                print!("{t}");
            }
            r.map(|_| EXIT_OK)
        }),
        Command::CheckGrad(a) => ExperimentConfig::load(&a.config).and_then(|cfg| {
            let s = cmd_check_grad(&cfg)?;
            for r in &s.runs {
                println!(
                    "tied={} seed={} params={} max relative error {:.3e}",
                    r.tied, r.seed, r.params, r.max_rel_error
                );
            }
            println!("{} (tolerance {:e}, step {:e})", if s.passed { "PASS" } else { "FAIL" }, s.tolerance, s.step);
            Ok(if s.passed { EXIT_OK } else { EXIT_FAILURE })
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
