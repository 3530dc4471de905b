//! The `gen`, `train`, `influence` and `check-grad` stages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::manifest::RunManifest;
use crate::corpus::{
    build_copy_probe_cases, build_copy_subset, build_probe_cases, build_probing_subset, generate_clean_corpus,
    inject_copy_noise, inject_pattern_noise, read_tsv, write_tsv, DroppedProbe, NoiseManifest, ParallelExample,
    ProbeCase, ProbeTarget, Translator,
};
use crate::error::{Error, Result};
use crate::influence::{
    build_probe_gradient, score_matrix, select_checkpoints, BuildStats, ComponentSelector, Direction, GradientCache,
    GradientSource, InfluenceRanking, ProbeGradientSpec, ProbeVariant, RankedExample,
};
use crate::seqmodel::gradcheck::{check_config, finite_difference_check, FD_STEP};
use crate::seqmodel::{
    train, CheckpointSnapshot, EncodedPair, GradientOrigin, GradientVector, LossHistory, ModelConfig, Seq2Seq,
    Vocabulary,
};

/// File locations inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunPaths { root: root.into() }
    }

    pub fn corpus(&self, name: &str) -> PathBuf {
        self.root.join("corpus").join(name)
    }

    pub fn train(&self, name: &str) -> PathBuf {
        self.root.join("train").join(name)
    }

    pub fn checkpoint(&self, epoch: u32) -> PathBuf {
        self.train(&format!("epoch-{epoch:03}.gsck"))
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("influence").join("cache").join("train.gsim")
    }

    pub fn probes(&self, target: ProbeTarget) -> PathBuf {
        self.root.join("influence").join("probes").join(format!("{}.json", target_name(target)))
    }

    pub fn rankings(&self, target: ProbeTarget) -> PathBuf {
        self.root.join("influence").join("rankings").join(target_name(target))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("report").join(name)
    }
}

pub fn target_name(target: ProbeTarget) -> String {
    match target {
        ProbeTarget::Pattern(id) => format!("pattern-{id}"),
        ProbeTarget::Copy => "copy".into(),
    }
}

/// Every probe target the config defines, patterns first.
pub fn configured_targets(cfg: &ExperimentConfig) -> Vec<ProbeTarget> {
    let mut t: Vec<ProbeTarget> = cfg.noise.patterns.iter().map(|p| ProbeTarget::Pattern(p.id)).collect();
    if cfg.noise.copy_fraction > 0.0 {
        t.push(ProbeTarget::Copy);
    }
    t
}

pub fn variants_for(cfg: &ExperimentConfig, target: ProbeTarget) -> &[ProbeVariant] {
    match target {
        ProbeTarget::Pattern(_) => &cfg.influence.variants,
        ProbeTarget::Copy => &cfg.influence.copy_variants,
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingPrerequisite(path.to_path_buf()))
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, serde_json::to_string_pretty(value)? + "\n")
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    require(path)?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

fn remove_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub(crate) fn finish_stage(
    cfg: &ExperimentConfig,
    out: &Path,
    stage: &str,
    dirs: &[&str],
    started: Instant,
) -> Result<()> {
    let mut m = RunManifest::load_or_new(out, &cfg.hash())?;
    for d in dirs {
        m.record_dir(out, d)?;
    }
    m.timings.insert(stage.to_string(), started.elapsed().as_secs_f64());
    m.save(out)
}

/// Example ids of each target's probing subset, keyed by target name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Subsets(pub BTreeMap<String, Vec<u64>>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub n_train: usize,
    pub n_noisy: usize,
    pub manifest: NoiseManifest,
}

/// Writes the clean and poisoned training corpora, validation and test
/// corpora, the noise manifest, probing subsets, probe sources and
/// vocabularies.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let paths = RunPaths::new(out);
    let clean = generate_clean_corpus(&cfg.corpus_spec(cfg.corpus.n_examples, cfg.derived_seed("corpus")))?;
    let mut poisoned = clean.clone();
    let mut manifest = NoiseManifest::from_corpus(&clean);
    for p in &cfg.noise.patterns {
        let seed = cfg.derived_seed(&format!("pattern-{}", p.id));
        let (next, m) = inject_pattern_noise(&poisoned, p, cfg.noise.pattern_probability, seed)?;
        poisoned = next;
        manifest = manifest.merge(m);
    }
    if cfg.noise.copy_fraction > 0.0 {
        let (next, m) =
            inject_copy_noise(&poisoned, cfg.noise.copy_fraction, cfg.derived_seed("copy"), &cfg.corpus.grammar)?;
        poisoned = next;
        manifest = manifest.merge(m);
    }
    let valid = generate_clean_corpus(&cfg.corpus_spec(cfg.corpus.n_valid, cfg.derived_seed("valid")))?;
    let test = generate_clean_corpus(&cfg.corpus_spec(cfg.corpus.n_test, cfg.derived_seed("test")))?;

    let subset_seed = cfg.derived_seed("subset");
    let mut subsets = Subsets::default();
    let mut sources: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for target in configured_targets(cfg) {
        let (subset, probe_sources) = match target {
            ProbeTarget::Pattern(id) => {
                let p = cfg.noise.patterns.iter().find(|p| p.id == id).expect("configured pattern");
                let s = build_probing_subset(&poisoned, p, cfg.influence.n_random, subset_seed);
                let src: Vec<u64> = test.iter().filter(|e| e.src_contains(&p.src_word)).map(|e| e.id).collect();
                if let Some(c) = manifest.patterns.get_mut(&id) {
                    c.train = s.len();
                    c.probing = src.len();
                }
                (s, src)
            }
            ProbeTarget::Copy => {
                (build_copy_subset(&poisoned, cfg.influence.n_random, subset_seed), test.iter().map(|e| e.id).collect())
            }
        };
        subsets.0.insert(target_name(target), subset.iter().map(|e| e.id).collect());
        sources.insert(target_name(target), probe_sources);
    }
    let problems = manifest.verify(&poisoned);
    if !problems.is_empty() {
        return Err(Error::Incomplete(format!("noise manifest disagrees with corpus: {}", problems.join("; "))));
    }

    remove_dir(&out.join("corpus"))?;
    write_tsv(&paths.corpus("clean.tsv"), &clean)?;
    write_tsv(&paths.corpus("train.tsv"), &poisoned)?;
    write_tsv(&paths.corpus("valid.tsv"), &valid)?;
    write_tsv(&paths.corpus("test.tsv"), &test)?;
    write_json(&paths.corpus("manifest.json"), &manifest)?;
    write_json(&paths.corpus("subsets.json"), &subsets)?;
    write_json(&paths.corpus("probe_sources.json"), &sources)?;
    let (sv, tv) = cfg.corpus.lexicon.vocabularies();
    sv.save(&paths.corpus("src.vocab"))?;
    tv.save(&paths.corpus("trg.vocab"))?;
    write_file(&out.join("config.toml"), cfg.to_toml()?)?;
    let mut m = RunManifest::load_or_new(out, &cfg.hash())?;
    m.record_file(out, "config.toml")?;
    m.save(out)?;
    finish_stage(cfg, out, "gen", &["corpus"], started)?;
    log::info!(
        "gen: {} training examples ({} noisy) in {}",
        poisoned.len(),
        manifest.provenance.values().filter(|p| p.is_noisy()).count(),
        out.display()
    );
    Ok(GenSummary {
        n_train: poisoned.len(),
        n_noisy: manifest.provenance.values().filter(|p| p.is_noisy()).count(),
        manifest,
    })
}

/// Selected checkpoint epochs, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointList {
    pub epochs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<u32>,
    pub history: LossHistory,
}

pub(crate) struct Vocabs {
    pub src: Vocabulary,
    pub trg: Vocabulary,
}

pub(crate) fn load_vocabs(paths: &RunPaths) -> Result<Vocabs> {
    let (s, t) = (paths.corpus("src.vocab"), paths.corpus("trg.vocab"));
    require(&s)?;
    require(&t)?;
    Ok(Vocabs { src: Vocabulary::load(&s)?, trg: Vocabulary::load(&t)? })
}

pub(crate) fn load_corpus(paths: &RunPaths, name: &str) -> Result<Vec<ParallelExample>> {
    let p = paths.corpus(name);
    require(&p)?;
    read_tsv(&p)
}

fn encode(v: &Vocabs, e: &ParallelExample) -> EncodedPair {
    EncodedPair { src: v.src.encode(&e.src), trg: v.trg.encode(&e.trg) }
}

/// Trains on the poisoned corpus and keeps the snapshots chosen by the
/// checkpoint policy.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let paths = RunPaths::new(out);
    let corpus = load_corpus(&paths, "train.tsv")?;
    let valid = load_corpus(&paths, "valid.tsv")?;
    let vocabs = load_vocabs(&paths)?;
    let config = cfg.model_config(vocabs.src.len(), vocabs.trg.len());
    let model = Seq2Seq::new(config.clone())?;
    let train_pairs: Vec<EncodedPair> = corpus.iter().map(|e| encode(&vocabs, e)).collect();
    let valid_pairs: Vec<EncodedPair> = valid.iter().map(|e| encode(&vocabs, e)).collect();
    let outcome = train(&model, &train_pairs, &valid_pairs, &cfg.train_options())?;

    let epochs = match (&cfg.checkpoints.count, &cfg.checkpoints.epochs) {
        (_, Some(list)) => {
            let mut l = list.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
        (Some(c), None) => select_checkpoints(&outcome.history, *c)?,
        (None, None) => unreachable!("validated"),
    };
    remove_dir(&out.join("train"))?;
    for s in outcome.snapshots.iter().filter(|s| epochs.contains(&s.epoch)) {
        let p = paths.checkpoint(s.epoch);
        write_file(&p, s.to_bytes(&config)?)?;
    }
    write_file(&paths.train("history.csv"), outcome.history.to_csv())?;
    write_json(&paths.train("history.json"), &outcome.history)?;
    write_json(&paths.train("checkpoints.json"), &CheckpointList { epochs: epochs.clone() })?;
    finish_stage(cfg, out, "train", &["train"], started)?;
    log::info!("train: kept checkpoints {epochs:?}");
    Ok(TrainSummary { epochs, history: outcome.history })
}

pub(crate) fn load_snapshots(paths: &RunPaths) -> Result<(ModelConfig, Vec<CheckpointSnapshot>)> {
    let list: CheckpointList = read_json(&paths.train("checkpoints.json"))?;
    let mut config = None;
    let mut snaps = Vec::with_capacity(list.epochs.len());
    for &e in &list.epochs {
        let p = paths.checkpoint(e);
        require(&p)?;
        let (c, s) = CheckpointSnapshot::load(&p)?;
        if config.as_ref().is_some_and(|prev| *prev != c) {
            return Err(Error::CheckpointMismatch(format!("{} has a different model config", p.display())));
        }
        config = Some(c);
        snaps.push(s);
    }
    let config = config.ok_or_else(|| Error::EmptyInput("no checkpoints listed".into()))?;
    Ok((config, snaps))
}

/// Which probe targets `cmd_influence` processes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetFilter {
    All,
    Pattern(u32),
    Copy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeFile {
    pub cases: Vec<ProbeCase>,
    pub dropped: Vec<DroppedProbe>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankingMeta {
    pub probe_id: String,
    pub variant: ProbeVariant,
    pub selector: ComponentSelector,
    pub direction: Direction,
    pub epochs: Vec<u32>,
    pub len: usize,
    /// Relative to the target's ranking directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target: String,
    pub probes: usize,
    pub dropped: usize,
    pub subset: usize,
    pub rankings: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfluenceSummary {
    pub cache: BuildStats,
    pub targets: Vec<TargetSummary>,
}

pub(crate) fn variant_slug(v: ProbeVariant) -> String {
    v.to_string().replace("GD(", "GD-").replace(',', "-").replace(')', "")
}

pub fn ranking_file(
    meta_probe: &str,
    variant: ProbeVariant,
    selector: &ComponentSelector,
    direction: Direction,
) -> String {
    let dir = match direction {
        Direction::Positive => "pos",
        Direction::Negative => "neg",
    };
    format!("{meta_probe}/{}.{selector}.{dir}.csv", variant_slug(variant))
}

/// Builds the gradient cache over all configured probing subsets, then
/// ranks each selected target's subset for every probe, variant, selector
/// and direction.
pub fn cmd_influence(
    cfg: &ExperimentConfig,
    out: &Path,
    filter: TargetFilter,
    workers: usize,
) -> Result<InfluenceSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let paths = RunPaths::new(out);
    let all_targets = configured_targets(cfg);
    let targets: Vec<ProbeTarget> = match filter {
        TargetFilter::All => all_targets.clone(),
        TargetFilter::Pattern(id) => {
            if !cfg.noise.patterns.iter().any(|p| p.id == id) {
                return Err(Error::Validation(vec![format!("--pattern {id}: no such pattern in noise.patterns")]));
            }
            vec![ProbeTarget::Pattern(id)]
        }
        TargetFilter::Copy => {
            if !all_targets.contains(&ProbeTarget::Copy) {
                return Err(Error::Validation(vec!["--copy-mode needs noise.copy_fraction > 0".into()]));
            }
            vec![ProbeTarget::Copy]
        }
    };

    let corpus = load_corpus(&paths, "train.tsv")?;
    let test = load_corpus(&paths, "test.tsv")?;
    let vocabs = load_vocabs(&paths)?;
    let subsets: Subsets = read_json(&paths.corpus("subsets.json"))?;
    let sources: BTreeMap<String, Vec<u64>> = read_json(&paths.corpus("probe_sources.json"))?;
    let (config, snapshots) = load_snapshots(&paths)?;
    let model = Seq2Seq::new(config)?;
    let epochs: Vec<u32> = snapshots.iter().map(|s| s.epoch).collect();
    let final_snap = snapshots.last().expect("nonempty");

    let by_id: HashMap<u64, &ParallelExample> = corpus.iter().map(|e| (e.id, e)).collect();
    let mut union = BTreeSet::new();
    for t in &all_targets {
        let ids =
            subsets.0.get(&target_name(*t)).ok_or_else(|| Error::MissingPrerequisite(paths.corpus("subsets.json")))?;
        union.extend(ids.iter().copied());
    }
    let union: Vec<u64> = union.into_iter().collect();
    let snap_by_epoch: HashMap<u32, &CheckpointSnapshot> = snapshots.iter().map(|s| (s.epoch, s)).collect();
    let cache_hash = format!("{}:{}", cfg.hash(), epochs.iter().map(u32::to_string).collect::<Vec<_>>().join(","));
    let t0 = Instant::now();
    let (cache, stats) =
        GradientCache::build(&paths.cache(), &cache_hash, model.layout(), &epochs, &union, workers, |id, epoch| {
            let e = by_id
                .get(&id)
                .ok_or_else(|| Error::InvalidExample(format!("example {id} not in the training corpus")))?;
            let snap = snap_by_epoch[&epoch];
            let origin = GradientOrigin { example_id: id, epoch, mask_id: None };
            model.per_example_gradient(&snap.params, &encode(&vocabs, e), None, origin)
        })?;
    log::info!(
        "influence: cache {} records ({} computed, {} reused) in {:.1?}",
        cache.len(),
        stats.computed,
        stats.reused,
        t0.elapsed()
    );

    let translator = Translator {
        model: &model,
        params: &final_snap.params,
        src_vocab: &vocabs.src,
        trg_vocab: &vocabs.trg,
        beam: cfg.influence.beam,
    };
    let source = GradientSource { model: &model, src_vocab: &vocabs.src, trg_vocab: &vocabs.trg };
    let mut summaries = Vec::new();
    for target in targets {
        let name = target_name(target);
        let test_ids: BTreeSet<u64> = sources.get(&name).map(|v| v.iter().copied().collect()).unwrap_or_default();
        let held_out: Vec<ParallelExample> = test.iter().filter(|e| test_ids.contains(&e.id)).cloned().collect();
        let (cases, dropped) = match target {
            ProbeTarget::Pattern(id) => {
                let p = cfg.noise.patterns.iter().find(|p| p.id == id).expect("checked above");
                build_probe_cases(&translator, &held_out, p, Some(cfg.influence.max_probes))
            }
            ProbeTarget::Copy => build_copy_probe_cases(&translator, &held_out, Some(cfg.influence.max_probes)),
        };
        write_json(&paths.probes(target), &ProbeFile { cases: cases.clone(), dropped: dropped.clone() })?;
        let dir = paths.rankings(target);
        remove_dir(&dir)?;
        let subset = &subsets.0[&name];
        if cases.is_empty() {
            log::warn!("influence: {name} has no probe cases ({} sources dropped)", dropped.len());
            write_json(&dir.join("index.json"), &Vec::<RankingMeta>::new())?;
            summaries.push(TargetSummary {
                target: name,
                probes: 0,
                dropped: dropped.len(),
                subset: subset.len(),
                rankings: 0,
            });
            continue;
        }
        let variants = variants_for(cfg, target);
        let t1 = Instant::now();
        let mut keys = Vec::new();
        let mut probe_grads: Vec<Vec<GradientVector>> = Vec::new();
        for case in &cases {
            for &variant in variants {
                let spec = ProbeGradientSpec { variant, case };
                let per_epoch =
                    snapshots.iter().map(|s| build_probe_gradient(&spec, &source, s)).collect::<Result<Vec<_>>>()?;
                keys.push((case.id.clone(), variant));
                probe_grads.push(per_epoch);
            }
        }
        let selectors = &cfg.influence.selectors;
        let scores = score_matrix(&cache, &epochs, subset, &probe_grads, selectors, workers)?;
        let provenance = NoiseManifest::from_corpus(&corpus);
        let mut index = Vec::new();
        for ((probe_id, variant), per_sel) in keys.iter().zip(&scores) {
            for (sel, vals) in selectors.iter().zip(per_sel) {
                for direction in cfg.influence.direction.directions(*variant) {
                    let entries = subset.iter().zip(vals).map(|(&id, &score)| RankedExample { id, score }).collect();
                    let r = InfluenceRanking::new(
                        probe_id.clone(),
                        sel.clone(),
                        *variant,
                        direction,
                        epochs.clone(),
                        entries,
                    );
                    let file = ranking_file(probe_id, *variant, sel, direction);
                    write_file(&dir.join(&file), r.to_csv(&provenance))?;
                    index.push(RankingMeta {
                        probe_id: probe_id.clone(),
                        variant: *variant,
                        selector: sel.clone(),
                        direction,
                        epochs: epochs.clone(),
                        len: r.len(),
                        file,
                    });
                }
            }
        }
        write_json(&dir.join("index.json"), &index)?;
        log::info!(
            "influence: {name}: {} probes x {} variants over {} examples, {} rankings in {:.1?}",
            cases.len(),
            variants.len(),
            subset.len(),
            index.len(),
            t1.elapsed()
        );
        summaries.push(TargetSummary {
            target: name,
            probes: cases.len(),
            dropped: dropped.len(),
            subset: subset.len(),
            rankings: index.len(),
        });
    }
    finish_stage(cfg, out, "influence", &["influence"], started)?;
    Ok(InfluenceSummary { cache: stats, targets: summaries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRun {
    pub tied: bool,
    pub seed: u64,
    pub params: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub step: f64,
    pub tolerance: f64,
    pub runs: Vec<GradCheckRun>,
    pub passed: bool,
}

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

/// Central differences on the small 64-bit check model, untied and tied,
/// for a few seeds derived from the config.
pub fn cmd_check_grad(cfg: &ExperimentConfig) -> Result<GradCheckSummary> {
    let mut runs = Vec::new();
    for tied in [false, true] {
        let config = check_config(tied);
        let params = Seq2Seq::new(config.clone())?.num_params();
        for k in 0..3 {
            let seed = cfg.derived_seed(&format!("check-grad-{k}"));
            let max_rel_error = finite_difference_check(&config, seed)?;
            runs.push(GradCheckRun { tied, seed, params, max_rel_error });
        }
    }
    let passed = runs.iter().all(|r| r.max_rel_error <= GRAD_CHECK_TOLERANCE);
    Ok(GradCheckSummary { step: FD_STEP, tolerance: GRAD_CHECK_TOLERANCE, runs, passed })
}
