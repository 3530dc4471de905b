//! Properties of full-size toy runs: what the trained model translates,
//! the probes it yields and the shape of the influence outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gradsieve::cli::{cmd_gen, cmd_influence, cmd_train, ExperimentConfig, RankingMeta, RunPaths, TargetFilter};
use gradsieve::corpus::{build_probe_cases, read_tsv, NoiseManifest, ParallelExample, ProbeTarget, Translator};
use gradsieve::seqmodel::{CheckpointSnapshot, ModelConfig, Seq2Seq, Vocabulary};

struct Trained {
    dir: PathBuf,
    config: ModelConfig,
    snapshot: CheckpointSnapshot,
    src: Vocabulary,
    trg: Vocabulary,
}

impl Trained {
    fn load(cfg: &ExperimentConfig, dir: PathBuf) -> Self {
        let paths = RunPaths::new(&dir);
        let (config, snapshot) = CheckpointSnapshot::load(&paths.checkpoint(cfg.train.epochs)).unwrap();
        Trained {
            config,
            snapshot,
            src: Vocabulary::load(&paths.corpus("src.vocab")).unwrap(),
            trg: Vocabulary::load(&paths.corpus("trg.vocab")).unwrap(),
            dir,
        }
    }

    fn translate_all(&self, sources: &[&[String]], beam: usize) -> Vec<Vec<String>> {
        let model = Seq2Seq::new(self.config.clone()).unwrap();
        let t = Translator {
            model: &model,
            params: &self.snapshot.params,
            src_vocab: &self.src,
            trg_vocab: &self.trg,
            beam,
        };
        sources.iter().map(|s| t.translate(s)).collect()
    }
}

fn scratch(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("toy-run").join(name)
}

fn fresh(dir: &Path) {
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
}

fn poisoned() -> &'static (ExperimentConfig, Trained) {
    static RUN: OnceLock<(ExperimentConfig, Trained)> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ExperimentConfig::toy(11);
        let dir = scratch("poisoned");
        fresh(&dir);
        cmd_gen(&cfg, &dir).unwrap();
        cmd_train(&cfg, &dir).unwrap();
        let t = Trained::load(&cfg, dir);
        (cfg, t)
    })
}

fn corpus(dir: &Path, name: &str) -> Vec<ParallelExample> {
    read_tsv(&RunPaths::new(dir).corpus(name)).unwrap()
}

#[test]
fn clean_held_out_sentences_are_translated() {
    let (cfg, run) = poisoned();
    let test = corpus(&run.dir, "test.tsv");
    let pattern_words: Vec<&str> = cfg.noise.patterns.iter().map(|p| p.src_word.as_str()).collect();
    let clean: Vec<&ParallelExample> =
        test.iter().filter(|e| !e.src.iter().any(|w| pattern_words.contains(&w.as_str()))).collect();
    assert!(clean.len() > 100);
    let sources: Vec<&[String]> = clean.iter().map(|e| e.src.as_slice()).collect();
    let hyps = run.translate_all(&sources, 1);
    let exact = clean.iter().zip(&hyps).filter(|(e, h)| e.trg == **h).count();
    let accuracy = exact as f64 / clean.len() as f64;
    assert!(accuracy >= 0.9, "greedy exact match {exact}/{}", clean.len());
}

#[test]
fn injected_errors_show_up_in_translations() {
    let (cfg, run) = poisoned();
    let test = corpus(&run.dir, "test.tsv");
    let model = Seq2Seq::new(run.config.clone()).unwrap();
    let t = Translator {
        model: &model,
        params: &run.snapshot.params,
        src_vocab: &run.src,
        trg_vocab: &run.trg,
        beam: cfg.influence.beam,
    };
    for p in &cfg.noise.patterns {
        let (cases, dropped) = build_probe_cases(&t, &test, p, None);
        assert!(cases.len() >= 10, "{}: {} probes, {} dropped", p.label(), cases.len(), dropped.len());
        assert!(cases.iter().all(|c| c.hypothesis.contains(&p.wrong_trg)));
    }
    let august = test.iter().find(|e| e.src_contains("august")).unwrap();
    let any_january =
        test.iter().filter(|e| e.src_contains("august")).any(|e| t.translate(&e.src).iter().any(|w| w == "january"));
    assert!(any_january, "no `august` source is mistranslated, e.g. {:?}", august.src);
}

#[test]
fn manifest_and_subsets_match_a_rescan() {
    let (cfg, run) = poisoned();
    let clean = corpus(&run.dir, "clean.tsv");
    let train = corpus(&run.dir, "train.tsv");
    let manifest: NoiseManifest =
        serde_json::from_str(&std::fs::read_to_string(RunPaths::new(&run.dir).corpus("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(clean.len(), train.len());
    for (c, t) in clean.iter().zip(&train) {
        assert_eq!(c.id, t.id);
        assert_eq!(c.src, t.src);
        assert_eq!(c.trg != t.trg, t.provenance.is_noisy(), "example {}", t.id);
        assert_eq!(manifest.provenance_of(t.id), Some(t.provenance));
    }
    let subsets: BTreeMap<String, Vec<u64>> =
        serde_json::from_str(&std::fs::read_to_string(RunPaths::new(&run.dir).corpus("subsets.json")).unwrap())
            .unwrap();
    let mut random_parts = Vec::new();
    for p in &cfg.noise.patterns {
        let counts = &manifest.patterns[&p.id];
        let matching = train.iter().filter(|e| e.src_contains(&p.src_word)).count();
        let noisy = train.iter().filter(|e| e.provenance == gradsieve::corpus::Provenance::PatternNoise(p.id)).count();
        assert_eq!((counts.matching, counts.noisy), (matching, noisy));

        let words = [&p.src_word, &p.correct_trg, &p.wrong_trg];
        let matches: BTreeSet<u64> = train
            .iter()
            .filter(|e| words.iter().any(|w| e.src_contains(w) || e.trg_contains(w)))
            .map(|e| e.id)
            .collect();
        let subset: BTreeSet<u64> = subsets[&format!("pattern-{}", p.id)].iter().copied().collect();
        assert_eq!(subset.len(), counts.train);
        assert!(matches.is_subset(&subset));
        let rest: BTreeSet<u64> = subset.difference(&matches).copied().collect();
        assert!(rest.len() <= cfg.influence.n_random);
        random_parts.push((matches, rest));
    }
    // one shared random draw: what a pattern adds is the draw minus its matches
    let draw: BTreeSet<u64> = random_parts.iter().flat_map(|(_, r)| r.iter().copied()).collect();
    for (matches, rest) in &random_parts {
        let expected: BTreeSet<u64> = draw.difference(matches).copied().collect();
        assert!(rest.is_subset(&expected));
    }
}

#[test]
fn default_matrix_has_48_rankings_per_probe() {
    let (cfg, run) = poisoned();
    let target = ProbeTarget::Pattern(cfg.noise.patterns[1].id);
    let s = cmd_influence(cfg, &run.dir, TargetFilter::Pattern(cfg.noise.patterns[1].id), 1).unwrap();
    assert_eq!(s.targets.len(), 1);
    assert!(s.targets[0].probes > 0);
    let index: Vec<RankingMeta> = serde_json::from_str(
        &std::fs::read_to_string(RunPaths::new(&run.dir).rankings(target).join("index.json")).unwrap(),
    )
    .unwrap();
    let mut per_probe: BTreeMap<&str, usize> = BTreeMap::new();
    for m in &index {
        *per_probe.entry(m.probe_id.as_str()).or_default() += 1;
    }
    assert_eq!(per_probe.len(), s.targets[0].probes);
    assert!(per_probe.values().all(|&n| n == 48), "{per_probe:?}");
}

#[test]
fn copy_noise_teaches_copying() {
    let mut cfg = ExperimentConfig::toy(12);
    cfg.noise.patterns.clear();
    cfg.noise.copy_fraction = 0.25;
    let dir = scratch("copy");
    fresh(&dir);
    cmd_gen(&cfg, &dir).unwrap();
    cmd_train(&cfg, &dir).unwrap();
    let run = Trained::load(&cfg, dir);

    let seen: BTreeSet<Vec<String>> = corpus(&run.dir, "train.tsv").into_iter().map(|e| e.src).collect();
    let grammar = &cfg.corpus.grammar;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let held_out: Vec<Vec<String>> = grammar
        .sample_template(&grammar.copy_template, 400, &mut rng)
        .unwrap()
        .into_iter()
        .filter(|s| !seen.contains(s))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    assert!(held_out.len() >= 20, "{}", held_out.len());
    let sources: Vec<&[String]> = held_out.iter().map(|s| s.as_slice()).collect();
    let hyps = run.translate_all(&sources, cfg.influence.beam);
    let copied = held_out.iter().zip(&hyps).filter(|(s, h)| s == h).count();
    assert!(copied as f64 >= 0.3 * held_out.len() as f64, "copied {copied}/{}", held_out.len());
}
