//! The `report` stage: precision grids, threshold statistics, ranking
//! curves and the component-sensitivity summary.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{parse_curve_spec, ExperimentConfig};
use super::pipeline::{
    configured_targets, load_corpus, load_snapshots, load_vocabs, ranking_file, read_json, target_name, variants_for,
    write_json, ProbeFile, RankingMeta, RunPaths,
};
use crate::corpus::{NoiseManifest, PatternCounts, ProbeTarget, Provenance};
use crate::error::{Error, Result};
use crate::eval::{
    aligned, cell, is_hit, macro_average, max_influence_stats, precision_of_ids, random_pairing_stats, ranking_curve,
    sensitivity_matrix, PairScorer, PairingMode, PatternPrecision, Perturbation, ProbePrecision, RetrievalConfig,
    RetrievalReport, SensitivityMatrix, ThresholdStats,
};
use crate::influence::{parse_ranking_csv, ComponentSelector, GradientSource, InfluenceRanking, RankedExample};
use crate::seqmodel::Seq2Seq;

/// Per-configuration summary of where ranking curves drop most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowSummary {
    pub group: String,
    pub config: RetrievalConfig,
    pub n_probes: usize,
    pub window: usize,
    /// Probes whose largest drop lies within the first `window` positions.
    pub within_window: usize,
    pub mean_elbow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub epochs: Vec<u32>,
    pub selectors: Vec<ComponentSelector>,
    pub pool_size: usize,
    pub probes: usize,
    /// Mean |score| per selector, averaged over probes.
    pub random_source: Vec<f64>,
    pub random_target: Vec<f64>,
    pub matrix: SensitivityMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub top_x: Vec<f64>,
    pub counts: BTreeMap<u32, PatternCounts>,
    pub copy_noise: usize,
    /// Macro-averaged over patterns, one entry per configuration.
    pub retrieval: Vec<RetrievalReport>,
    pub copy_retrieval: Vec<RetrievalReport>,
    /// Standard deviations are population deviations.
    pub thresholds: Vec<ThresholdStats>,
    pub elbows: Vec<ElbowSummary>,
    pub sensitivity: Option<SensitivityReport>,
    /// Expected results that were not found.
    pub gaps: Vec<String>,
}

impl Report {
    pub fn retrieval_for(&self, variant: &str, selector: &str) -> Option<&RetrievalReport> {
        self.retrieval
            .iter()
            .find(|r| r.config.variant.to_string() == variant && r.config.selector.to_string() == selector)
    }

    pub fn copy_retrieval_for(&self, variant: &str, selector: &str) -> Option<&RetrievalReport> {
        self.copy_retrieval
            .iter()
            .find(|r| r.config.variant.to_string() == variant && r.config.selector.to_string() == selector)
    }
}

struct Loaded {
    target: ProbeTarget,
    probe_order: Vec<String>,
    rankings: Vec<InfluenceRanking>,
}

fn load_target(
    paths: &RunPaths,
    cfg: &ExperimentConfig,
    target: ProbeTarget,
    gaps: &mut Vec<String>,
) -> Result<Option<Loaded>> {
    let name = target_name(target);
    let probes_path = paths.probes(target);
    let index_path = paths.rankings(target).join("index.json");
    if !probes_path.exists() || !index_path.exists() {
        gaps.push(format!("{name}: no influence results"));
        return Ok(None);
    }
    let probes: ProbeFile = read_json(&probes_path)?;
    let index: Vec<RankingMeta> = read_json(&index_path)?;
    let mut by_key: BTreeMap<(String, String, String, String), &RankingMeta> = BTreeMap::new();
    for m in &index {
        by_key.insert(
            (m.probe_id.clone(), m.variant.to_string(), m.selector.to_string(), m.direction.sign().to_string()),
            m,
        );
    }
    let mut rankings = Vec::new();
    for case in &probes.cases {
        for &variant in variants_for(cfg, target) {
            for sel in &cfg.influence.selectors {
                for direction in cfg.influence.direction.directions(variant) {
                    let key = (case.id.clone(), variant.to_string(), sel.to_string(), direction.sign().to_string());
                    let label = format!("{name}/{} {}{variant} {sel}", case.id, direction.sign());
                    let Some(meta) = by_key.get(&key) else {
                        gaps.push(format!("{label}: ranking missing"));
                        continue;
                    };
                    let file = paths.rankings(target).join(&meta.file);
                    if !file.exists() {
                        gaps.push(format!("{label}: {} missing", file.display()));
                        continue;
                    }
                    let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
                    let rows = parse_ranking_csv(&text, &file)?;
                    rankings.push(InfluenceRanking {
                        probe_id: case.id.clone(),
                        selector: sel.clone(),
                        variant,
                        direction,
                        epochs: meta.epochs.clone(),
                        entries: rows.iter().map(|r| RankedExample { id: r.id, score: r.score }).collect(),
                    });
                }
            }
        }
    }
    Ok(Some(Loaded { target, probe_order: probes.cases.iter().map(|c| c.id.clone()).collect(), rankings }))
}

fn pattern_label(counts: &BTreeMap<u32, PatternCounts>, target: ProbeTarget) -> String {
    match target {
        ProbeTarget::Pattern(id) => counts.get(&id).map_or_else(|| target_name(target), |c| c.label.clone()),
        ProbeTarget::Copy => "copy".into(),
    }
}

fn precision_grid(
    loaded: &[&Loaded],
    manifest: &NoiseManifest,
    configs: &[RetrievalConfig],
    top_x: &[f64],
) -> Result<Vec<RetrievalReport>> {
    let mut out = Vec::new();
    for config in configs {
        let mut patterns = Vec::new();
        for l in loaded {
            let mut probes = Vec::new();
            for r in l.rankings.iter().filter(|r| RetrievalConfig::of(r) == *config) {
                let ids = r.ids();
                let precision = top_x
                    .iter()
                    .map(|&x| precision_of_ids(&ids, |id| is_hit(manifest.provenance_of(id), l.target), x))
                    .collect::<Result<Vec<_>>>()?;
                probes.push(ProbePrecision { probe_id: r.probe_id.clone(), precision });
            }
            patterns.push(PatternPrecision { pattern: pattern_label(&manifest.patterns, l.target), probes });
        }
        match macro_average(config.clone(), top_x, patterns) {
            Ok(r) => out.push(r),
            Err(Error::EmptyInput(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn configs_for(cfg: &ExperimentConfig, target: ProbeTarget) -> Vec<RetrievalConfig> {
    let mut out = Vec::new();
    for &variant in variants_for(cfg, target) {
        for direction in cfg.influence.direction.directions(variant) {
            for selector in &cfg.influence.selectors {
                out.push(RetrievalConfig { variant, selector: selector.clone(), direction });
            }
        }
    }
    out
}

fn sensitivity(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<SensitivityReport> {
    let vocabs = load_vocabs(paths)?;
    let (config, snapshots) = load_snapshots(paths)?;
    let model = Seq2Seq::new(config)?;
    let snaps = if cfg.report.sensitivity_all_checkpoints {
        snapshots
    } else {
        vec![snapshots.last().cloned().expect("nonempty")]
    };
    let corpus = load_corpus(paths, "train.tsv")?;
    let test = load_corpus(paths, "test.tsv")?;
    let mut pool: Vec<_> = corpus.into_iter().filter(|e| !e.provenance.is_noisy()).collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.derived_seed("sensitivity")));
    pool.truncate(cfg.report.sensitivity_pool);
    let probes: Vec<_> = test
        .into_iter()
        .filter(|e| e.provenance == Provenance::Clean)
        .take(cfg.report.sensitivity_probes.max(1))
        .collect();
    if probes.is_empty() || pool.is_empty() {
        return Err(Error::EmptyInput("sensitivity probes or pool".into()));
    }
    let source = GradientSource { model: &model, src_vocab: &vocabs.src, trg_vocab: &vocabs.trg };
    let scorer = PairScorer { source: &source, snapshots: &snaps };
    let selectors = cfg.influence.selectors.clone();
    let mut rs = vec![0.0; selectors.len()];
    let mut rt = vec![0.0; selectors.len()];
    for p in &probes {
        let a = random_pairing_stats(&scorer, p, &pool, &selectors, PairingMode::RandomSource)?;
        let b = random_pairing_stats(&scorer, p, &pool, &selectors, PairingMode::RandomTarget)?;
        rs.iter_mut().zip(a).for_each(|(t, v)| *t += v / probes.len() as f64);
        rt.iter_mut().zip(b).for_each(|(t, v)| *t += v / probes.len() as f64);
    }
    let matrix = sensitivity_matrix(&scorer, &probes[0], &pool[0], &Perturbation::ALL, &selectors)?;
    Ok(SensitivityReport {
        epochs: snaps.iter().map(|s| s.epoch).collect(),
        selectors,
        pool_size: pool.len(),
        probes: probes.len(),
        random_source: rs,
        random_target: rt,
        matrix,
    })
}

/// Builds the report from whatever rankings exist. Missing results are
/// listed in `gaps`; the report is written either way.
pub fn build_report(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    let paths = RunPaths::new(out);
    let manifest: NoiseManifest = read_json(&paths.corpus("manifest.json"))?;
    let mut gaps = Vec::new();
    let mut loaded = Vec::new();
    for target in configured_targets(cfg) {
        if let Some(l) = load_target(&paths, cfg, target, &mut gaps)? {
            loaded.push(l);
        }
    }
    let top_x = cfg.report.top_x.clone();
    let pattern_sets: Vec<&Loaded> = loaded.iter().filter(|l| l.target != ProbeTarget::Copy).collect();
    let copy_sets: Vec<&Loaded> = loaded.iter().filter(|l| l.target == ProbeTarget::Copy).collect();
    let pattern_configs = configs_for(cfg, ProbeTarget::Pattern(0));
    let copy_configs = configs_for(cfg, ProbeTarget::Copy);
    let retrieval = precision_grid(&pattern_sets, &manifest, &pattern_configs, &top_x)?;
    let copy_retrieval = precision_grid(&copy_sets, &manifest, &copy_configs, &top_x)?;

    let mut groups = Vec::new();
    for (group, sets, configs) in [("patterns", &pattern_sets, &pattern_configs), ("copy", &copy_sets, &copy_configs)] {
        for config in configs.iter() {
            let members: Vec<&InfluenceRanking> = sets
                .iter()
                .flat_map(|l| l.rankings.iter())
                .filter(|r| RetrievalConfig::of(r) == *config && !r.is_empty())
                .collect();
            if !members.is_empty() {
                groups.push((group.to_string(), config.clone(), members));
            }
        }
    }
    let thresholds = max_influence_stats(&groups)?;

    let curve_dir = paths.report("curves");
    if curve_dir.exists() {
        std::fs::remove_dir_all(&curve_dir).map_err(|e| Error::io(&curve_dir, e))?;
    }
    let mut elbows = Vec::new();
    for spec in &cfg.report.curves {
        let (variant, selector) = parse_curve_spec(spec).map_err(|e| Error::Validation(vec![e]))?;
        for (group, sets) in [("patterns", &pattern_sets), ("copy", &copy_sets)] {
            for direction in cfg.influence.direction.directions(variant) {
                let config = RetrievalConfig { variant, selector: selector.clone(), direction };
                let mut cuts = Vec::new();
                for l in sets.iter() {
                    for probe in &l.probe_order {
                        let Some(r) =
                            l.rankings.iter().find(|r| r.probe_id == *probe && RetrievalConfig::of(r) == config)
                        else {
                            continue;
                        };
                        let curve = ranking_curve(r, cfg.report.curve_length)?;
                        let file = curve_dir
                            .join(target_name(l.target))
                            .join(ranking_file(probe, variant, &selector, direction));
                        super::pipeline::write_file(&file, curve.to_csv())?;
                        if let Some(e) = curve.elbow() {
                            cuts.push(e);
                        }
                    }
                }
                if !cuts.is_empty() {
                    let window = cfg.report.elbow_window;
                    elbows.push(ElbowSummary {
                        group: group.into(),
                        config,
                        n_probes: cuts.len(),
                        window,
                        within_window: cuts.iter().filter(|&&c| c <= window).count(),
                        mean_elbow: cuts.iter().sum::<usize>() as f64 / cuts.len() as f64,
                    });
                }
            }
        }
    }

    let sensitivity = if loaded.iter().any(|l| !l.rankings.is_empty()) {
        match sensitivity(cfg, &paths) {
            Ok(s) => Some(s),
            Err(e) => {
                gaps.push(format!("sensitivity: {e}"));
                None
            }
        }
    } else {
        None
    };

    Ok(Report {
        config_hash: cfg.hash(),
        top_x,
        counts: manifest.patterns.clone(),
        copy_noise: manifest.copy_noise,
        retrieval,
        copy_retrieval,
        thresholds,
        elbows,
        sensitivity,
        gaps,
    })
}

fn grid_text(title: &str, reports: &[RetrievalReport], selectors: &[ComponentSelector], xi: usize, x: f64) -> String {
    let mut header = vec![format!("{title} precision@top-{x}%")];
    header.extend(selectors.iter().map(|s| s.to_string()));
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for r in reports {
        let l = format!("{}{}", r.config.direction.sign(), r.config.variant);
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    for l in labels {
        let mut row = vec![l.clone()];
        for s in selectors {
            let v = reports
                .iter()
                .find(|r| format!("{}{}", r.config.direction.sign(), r.config.variant) == l && r.config.selector == *s)
                .map(|r| r.macro_avg[xi]);
            row.push(cell(v));
        }
        rows.push(row);
    }
    aligned(&header, &rows)
}

pub fn render_text(report: &Report, cfg: &ExperimentConfig) -> String {
    let sels = &cfg.influence.selectors;
    let mut s = format!("config {}\n\n", report.config_hash);
    let header: Vec<String> =
        ["pattern", "matching", "train", "noisy", "probing"].iter().map(|h| h.to_string()).collect();
    let rows: Vec<Vec<String>> = report
        .counts
        .values()
        .map(|c| {
            vec![
                c.label.clone(),
                c.matching.to_string(),
                c.train.to_string(),
                c.noisy.to_string(),
                c.probing.to_string(),
            ]
        })
        .collect();
    if !rows.is_empty() {
        s += &aligned(&header, &rows);
    }
    if report.copy_noise > 0 {
        s += &format!("copied-source examples: {}\n", report.copy_noise);
    }
    s.push('\n');
    for (xi, &x) in report.top_x.iter().enumerate() {
        if !report.retrieval.is_empty() {
            s += &grid_text("macro", &report.retrieval, sels, xi, x);
            s.push('\n');
        }
    }
    if let Some(x) = report.top_x.first() {
        let patterns: Vec<String> = report
            .retrieval
            .first()
            .map(|r| r.patterns.iter().map(|p| p.pattern.clone()).collect())
            .unwrap_or_default();
        for (pi, p) in patterns.iter().enumerate() {
            let per: Vec<RetrievalReport> = report
                .retrieval
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.macro_avg = r.patterns[pi].mean.clone();
                    if r.macro_avg.is_empty() {
                        r.macro_avg = vec![f64::NAN; r.top_x.len()];
                    }
                    r
                })
                .collect();
            s += &grid_text(p, &per, sels, 0, *x);
            s.push('\n');
        }
    }
    for (xi, &x) in report.top_x.iter().enumerate() {
        if !report.copy_retrieval.is_empty() {
            s += &grid_text("copy", &report.copy_retrieval, sels, xi, x);
            s.push('\n');
        }
    }
    if !report.thresholds.is_empty() {
        let header: Vec<String> = ["group", "config", "probes", "max mean", "max std", "cut mean", "cut std"]
            .iter()
            .map(|h| h.to_string())
            .collect();
        let rows: Vec<Vec<String>> = report
            .thresholds
            .iter()
            .map(|t| {
                vec![
                    t.group.clone(),
                    t.config.label(),
                    t.n_probes.to_string(),
                    cell(Some(t.max_mean)),
                    cell(Some(t.max_std)),
                    format!("{:.1}", t.cut_mean),
                    format!("{:.1}", t.cut_std),
                ]
            })
            .collect();
        s += "largest influence and positive gap cut (population std)\n";
        s += &aligned(&header, &rows);
        s.push('\n');
    }
    if !report.elbows.is_empty() {
        let header: Vec<String> =
            ["group", "curve", "probes", "largest drop early", "mean position"].iter().map(|h| h.to_string()).collect();
        let rows: Vec<Vec<String>> = report
            .elbows
            .iter()
            .map(|e| {
                vec![
                    e.group.clone(),
                    e.config.label(),
                    e.n_probes.to_string(),
                    format!("{}/{} within {}", e.within_window, e.n_probes, e.window),
                    format!("{:.1}", e.mean_elbow),
                ]
            })
            .collect();
        s += &aligned(&header, &rows);
        s.push('\n');
    }
    if let Some(sens) = &report.sensitivity {
        let mut header =
            vec![format!("mean |score|, pool {} x {} probes, epochs {:?}", sens.pool_size, sens.probes, sens.epochs)];
        header.extend(sens.selectors.iter().map(|x| x.to_string()));
        let rows = vec![
            std::iter::once("random-source".to_string())
                .chain(sens.random_source.iter().map(|v| cell(Some(*v))))
                .collect(),
            std::iter::once("random-target".to_string())
                .chain(sens.random_target.iter().map(|v| cell(Some(*v))))
                .collect(),
        ];
        s += &aligned(&header, &rows);
        s.push('\n');
        let mut header = vec![format!("sensitivity of `{}`", sens.matrix.probe_src.join(" "))];
        header.extend(sens.matrix.selectors.iter().map(|x| x.to_string()));
        let rows: Vec<Vec<String>> = sens
            .matrix
            .rows
            .iter()
            .map(|r| {
                std::iter::once(r.perturbation.name().to_string())
                    .chain(r.scores.iter().map(|v| cell(Some(*v))))
                    .collect()
            })
            .collect();
        s += &aligned(&header, &rows);
        s.push('\n');
    }
    if !report.gaps.is_empty() {
        s += &format!("{} gaps:\n", report.gaps.len());
        for g in &report.gaps {
            s += &format!("  {g}\n");
        }
    }
    s
}

/// Writes `report/report.json`, `report/report.txt` and curves. Fails with
/// an incomplete-results error after writing when anything is missing.
pub fn cmd_report(cfg: &ExperimentConfig, out: &Path) -> Result<Report> {
    cfg.validate()?;
    let started = Instant::now();
    let paths = RunPaths::new(out);
    let report = build_report(cfg, out)?;
    write_json(&paths.report("report.json"), &report)?;
    super::pipeline::write_file(&paths.report("report.txt"), render_text(&report, cfg))?;
    super::pipeline::finish_stage(cfg, out, "report", &["report"], started)?;
    let nothing = report.retrieval.is_empty() && report.copy_retrieval.is_empty();
    if nothing {
        return Err(Error::Incomplete("no rankings found; run `influence` first".into()));
    }
    if !report.gaps.is_empty() {
        return Err(Error::Incomplete(format!("{} expected results missing", report.gaps.len())));
    }
    Ok(report)
}
