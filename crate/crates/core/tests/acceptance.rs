//! End-to-end acceptance checks. Prints one `[n] name: PASS|FAIL` line per
//! check and exits non-zero when any check fails. The default pipeline is
//! shared between checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gradsieve::cli::{
    cmd_check_grad, cmd_gen, cmd_influence, cmd_report, cmd_train, ExperimentConfig, Report, RunManifest, TargetFilter,
};
use gradsieve::corpus::{generate_clean_corpus, CorpusSpec};
use gradsieve::influence::{
    rank_subset, tracin, ComponentSelector, Direction, GradientCache, ProbeVariant, RankedExample,
};
use gradsieve::seqmodel::{CheckpointSnapshot, GradientOrigin, GradientVector, ModelConfig, Reduction, Seq2Seq};

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

struct Run {
    dir: PathBuf,
    elapsed: Duration,
    report: Report,
}

fn run_pipeline(cfg: &ExperimentConfig, dir: &Path) -> Run {
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let started = Instant::now();
    cmd_gen(cfg, dir).unwrap();
    cmd_train(cfg, dir).unwrap();
    cmd_influence(cfg, dir, TargetFilter::All, workers).unwrap();
    let report = cmd_report(cfg, dir).unwrap();
    Run { dir: dir.to_path_buf(), elapsed: started.elapsed(), report }
}

fn scratch(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn default_config() -> ExperimentConfig {
    let cfg = ExperimentConfig::toy(1);
    assert_eq!(cfg.corpus.n_examples, 5000);
    assert_eq!(cfg.noise.patterns.len(), 4);
    assert_eq!(cfg.noise.pattern_probability, 0.6);
    assert_eq!(cfg.train.epochs, 40);
    assert_eq!(cfg.checkpoints.count, Some(5));
    cfg
}

fn copy_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::toy(1);
    cfg.noise.patterns.clear();
    cfg.noise.copy_fraction = 0.25;
    cfg
}

fn default_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run_pipeline(&default_config(), &scratch("default-a")))
}

fn copy_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| run_pipeline(&copy_config(), &scratch("copy")))
}

fn top_x_index(report: &Report, x: f64) -> usize {
    report.top_x.iter().position(|&t| t == x).expect("top-x configured")
}

fn gradient_check() -> Verdict {
    let started = Instant::now();
    let s = cmd_check_grad(&ExperimentConfig::toy(1)).unwrap();
    let elapsed = started.elapsed();
    let worst = s.runs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let params = s.runs.iter().map(|r| r.params).max().unwrap_or(0);
    let ok = s.passed
        && !s.runs.is_empty()
        && params <= 500
        && worst <= 1e-5
        && s.step == 1e-6
        && elapsed < Duration::from_secs(10);
    verdict(ok, format!("{} runs, <= {params} params, max rel error {worst:.2e}, {elapsed:.2?}", s.runs.len()))
}

fn tracin_algebra() -> Verdict {
    let started = Instant::now();
    let spec = CorpusSpec::toy(12, 9);
    let corpus = generate_clean_corpus(&spec).unwrap();
    let (sv, tv) = spec.lexicon.vocabularies();
    let model = Seq2Seq::new(ModelConfig::toy(sv.len(), tv.len())).unwrap();
    let snapshots: Vec<CheckpointSnapshot> = (1..=3)
        .map(|e| CheckpointSnapshot { epoch: e, params: model.init_params(100 + e as u64, 0.2), validation_loss: 0.0 })
        .collect();
    let grads = |i: usize| -> Vec<GradientVector> {
        let pair = gradsieve::seqmodel::EncodedPair { src: sv.encode(&corpus[i].src), trg: tv.encode(&corpus[i].trg) };
        snapshots
            .iter()
            .map(|s| {
                let origin = GradientOrigin { example_id: i as u64, epoch: s.epoch, mask_id: None };
                model.per_example_gradient(&s.params, &pair, None, origin).unwrap()
            })
            .collect()
    };
    let (a, b) = (grads(0), grads(1));
    let mut worst = 0.0f64;
    let mut note = |v: f64, want: f64| worst = worst.max((v - want).abs());
    for sel in ComponentSelector::defaults() {
        note(tracin(&a, &a, &sel).unwrap(), 1.0);
        let ab = tracin(&a, &b, &sel).unwrap();
        note(tracin(&b, &a, &sel).unwrap(), ab);
        for k in [0.5f32, 3.0, 1000.0] {
            let scaled: Vec<_> = a.iter().map(|g| g.scaled(k)).collect();
            note(tracin(&scaled, &b, &sel).unwrap(), ab);
        }
        let per_ckpt: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| tracin(std::slice::from_ref(x), std::slice::from_ref(y), &sel).unwrap())
            .sum::<f64>()
            / a.len() as f64;
        note(per_ckpt, ab);
    }
    let pair = gradsieve::seqmodel::EncodedPair { src: sv.encode(&corpus[2].src), trg: tv.encode(&corpus[2].trg) };
    let zeros = vec![0u8; pair.trg.len()];
    let (loss, g) = model.loss_and_gradient(&snapshots[0].params, &pair, Some(&zeros), Reduction::Mean).unwrap();
    note(loss as f64, 0.0);
    let zero_grad = g.iter().all(|&v| v == 0.0);
    let elapsed = started.elapsed();
    verdict(
        worst <= 1e-6 && zero_grad && elapsed < Duration::from_secs(5),
        format!("max deviation {worst:.2e}, zero-mask gradient zero: {zero_grad}, {elapsed:.2?}"),
    )
}

/// Scores by direct re-evaluation and orders by repeated selection of the
/// best remaining entry.
fn brute_force_ranking(
    probe: &[GradientVector],
    subset: &[u64],
    cache: &GradientCache,
    epochs: &[u32],
    sel: &ComponentSelector,
    direction: Direction,
) -> Vec<RankedExample> {
    let mut rest: Vec<RankedExample> = subset
        .iter()
        .map(|&id| {
            let train: Vec<GradientVector> = epochs.iter().map(|&e| cache.get(id, e).unwrap()).collect();
            RankedExample { id, score: tracin(probe, &train, sel).unwrap() }
        })
        .collect();
    let better = |a: &RankedExample, b: &RankedExample| {
        let by_score = match direction {
            Direction::Positive => a.score > b.score,
            Direction::Negative => a.score < b.score,
        };
        by_score || (a.score == b.score && a.id < b.id)
    };
    let mut out = Vec::with_capacity(rest.len());
    while !rest.is_empty() {
        let mut best = 0;
        for i in 1..rest.len() {
            if better(&rest[i], &rest[best]) {
                best = i;
            }
        }
        out.push(rest.swap_remove(best));
    }
    out
}

fn ranking_matches_brute_force() -> Verdict {
    let started = Instant::now();
    let spec = CorpusSpec::toy(240, 21);
    let corpus = generate_clean_corpus(&spec).unwrap();
    let (sv, tv) = spec.lexicon.vocabularies();
    let model = Seq2Seq::new(ModelConfig::toy(sv.len(), tv.len())).unwrap();
    let epochs = [2u32, 5];
    let snapshots: Vec<CheckpointSnapshot> = epochs
        .iter()
        .map(|&e| CheckpointSnapshot { epoch: e, params: model.init_params(e as u64, 0.2), validation_loss: 0.0 })
        .collect();
    let grad = |i: usize, s: &CheckpointSnapshot| {
        let pair = gradsieve::seqmodel::EncodedPair { src: sv.encode(&corpus[i].src), trg: tv.encode(&corpus[i].trg) };
        let origin = GradientOrigin { example_id: corpus[i].id, epoch: s.epoch, mask_id: None };
        model.per_example_gradient(&s.params, &pair, None, origin).unwrap()
    };
    let dir = tempfile::tempdir().unwrap();
    let ids: Vec<u64> = corpus.iter().map(|e| e.id).collect();
    let index: BTreeMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let (cache, _) =
        GradientCache::build(&dir.path().join("oracle.gsim"), "oracle", model.layout(), &epochs, &ids, 1, |id, e| {
            Ok(grad(index[&id], snapshots.iter().find(|s| s.epoch == e).unwrap()))
        })
        .unwrap();

    let selectors = ComponentSelector::defaults();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut ties = 0;
    for _ in 0..100 {
        let n = rng.gen_range(0..=200);
        let subset: Vec<u64> = ids.choose_multiple(&mut rng, n).copied().collect();
        let probe_idx = rng.gen_range(0..corpus.len());
        let probe: Vec<GradientVector> = snapshots.iter().map(|s| grad(probe_idx, s)).collect();
        let sel = &selectors[rng.gen_range(0..selectors.len())];
        let direction = if rng.gen_bool(0.5) { Direction::Positive } else { Direction::Negative };
        let got = rank_subset(
            "oracle",
            "HYP".parse::<ProbeVariant>().unwrap(),
            &probe,
            &subset,
            &cache,
            &epochs,
            sel,
            direction,
        )
        .unwrap();
        let want = brute_force_ranking(&probe, &subset, &cache, &epochs, sel, direction);
        ties += want.windows(2).filter(|w| w[0].score == w[1].score).count();
        if got.entries != want {
            mismatches += 1;
        }
    }
    let elapsed = started.elapsed();
    verdict(
        mismatches == 0 && elapsed < Duration::from_secs(60),
        format!("100 trials, {mismatches} mismatches, {ties} tied neighbours, {elapsed:.2?}"),
    )
}

fn contrastive_variants_beat_vanilla() -> Verdict {
    let run = default_run();
    let r = &run.report;
    let i = top_x_index(r, 1.0);
    let gd = r.retrieval_for("GD(HYP,CorrHYP)", "full").expect("GD(HYP,CorrHYP)/full");
    let hyp = r.retrieval_for("HYP", "full").expect("HYP/full");
    let macro_ok = gd.macro_avg[i] > hyp.macro_avg[i];
    let mut detail = format!("GD full {:.3} vs HYP full {:.3}", gd.macro_avg[i], hyp.macro_avg[i]);
    let mut mask_ok = true;
    for (masked, plain) in [("HypMaskExact", "HYP"), ("CorrHypMaskExact", "CorrHYP")] {
        for sel in ["srcEmb", "output"] {
            let m = r.retrieval_for(masked, sel).expect("masked config");
            let p = r.retrieval_for(plain, sel).expect("unmasked config");
            let wins = m
                .patterns
                .iter()
                .filter(|mp| {
                    p.patterns.iter().find(|pp| pp.pattern == mp.pattern).is_some_and(|pp| mp.mean[i] > pp.mean[i])
                })
                .count();
            mask_ok &= wins >= 3;
            detail += &format!("; {masked} {sel} wins {wins}/{}", m.patterns.len());
        }
    }
    let time_ok = run.elapsed < Duration::from_secs(15 * 60);
    detail += &format!("; pipeline {:.1?}", run.elapsed);
    verdict(macro_ok && mask_ok && time_ok, detail)
}

fn component_sensitivity_orderings() -> Verdict {
    let run = default_run();
    let s = run.report.sensitivity.as_ref().expect("sensitivity section");
    let at = |name: &str| s.selectors.iter().position(|c| c.to_string() == name).expect("selector");
    let (src, out) = (at("srcEmb"), at("output"));
    let src_ok = s.random_target[src] > s.random_source[src];
    let out_ok = s.random_source[out] > s.random_target[out];
    let manifest = RunManifest::load_or_new(&run.dir, &default_config().hash()).unwrap();
    let seconds = manifest.timings.get("report").copied().unwrap_or(f64::INFINITY);
    verdict(
        src_ok && out_ok && s.pool_size >= 500 && seconds < 300.0,
        format!(
            "srcEmb rand-trg {:.3} vs rand-src {:.3}; output rand-src {:.3} vs rand-trg {:.3}; pool {}; {seconds:.1}s",
            s.random_target[src], s.random_source[src], s.random_source[out], s.random_target[out], s.pool_size
        ),
    )
}

fn copied_source_retrieval() -> Verdict {
    let run = copy_run();
    let r = &run.report;
    let i = top_x_index(r, 10.0);
    let hyp = r.copy_retrieval_for("HYP", "full").expect("HYP/full");
    let reference = r.copy_retrieval_for("REF", "full").expect("REF/full");
    let per_probe = |rep: &gradsieve::eval::RetrievalReport| -> BTreeMap<String, f64> {
        rep.patterns.iter().flat_map(|p| p.probes.iter().map(|q| (q.probe_id.clone(), q.precision[i]))).collect()
    };
    let (h, f) = (per_probe(hyp), per_probe(reference));
    let wins = h.iter().filter(|(id, v)| f.get(*id).is_some_and(|w| *v > w)).count();
    let ties = h.iter().filter(|(id, v)| f.get(*id).is_some_and(|w| *v == w)).count();
    let ok = !h.is_empty() && wins as f64 >= 0.8 * h.len() as f64 && run.elapsed < Duration::from_secs(600);
    verdict(
        ok,
        format!(
            "HYP beats REF on {wins}/{} probes ({ties} tied), means {:.3} vs {:.3}, pipeline {:.1?}",
            h.len(),
            hyp.macro_avg[i],
            reference.macro_avg[i],
            run.elapsed
        ),
    )
}

fn read_curve(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

fn gap_cut_and_elbow() -> Verdict {
    let run = default_run();
    let r = &run.report;
    let min_noisy = r.counts.values().map(|c| c.noisy).min().unwrap_or(0);
    let mut detail = format!("min noisy per pattern {min_noisy}");
    let mut cut_ok = min_noisy > 100;
    let mut n_gd = 0;
    for t in r.thresholds.iter().filter(|t| t.group == "patterns") {
        if t.config.variant.to_string() != "GD(HYP,CorrHYP)" {
            continue;
        }
        let sel = t.config.selector.to_string();
        if sel == "srcEmb" || sel == "full" {
            n_gd += 1;
            cut_ok &= t.cut_mean < 10.0;
            detail += &format!("; GD {sel} mean cut {:.1}", t.cut_mean);
        }
    }
    cut_ok &= n_gd == 2;

    let curves = gradsieve::cli::list_files(&run.dir.join("report").join("curves")).unwrap();
    let monotone = !curves.is_empty() && curves.iter().all(|p| read_curve(p).windows(2).all(|w| w[0] >= w[1]));
    let elbow = r
        .elbows
        .iter()
        .find(|e| {
            e.group == "patterns" && e.config.variant.to_string() == "HYP" && e.config.selector.to_string() == "full"
        })
        .expect("HYP/full elbow summary");
    let elbow_ok = elbow.window == 50 && elbow.within_window as f64 >= 0.75 * elbow.n_probes as f64;
    detail += &format!(
        "; {} curves non-increasing: {monotone}; HYP full largest drop within 50 for {}/{}",
        curves.len(),
        elbow.within_window,
        elbow.n_probes
    );
    verdict(cut_ok && monotone && elbow_ok, detail)
}

fn runs_are_reproducible() -> Verdict {
    let a = default_run();
    let b = run_pipeline(&default_config(), &scratch("default-b"));
    let hash = default_config().hash();
    let ma = RunManifest::load_or_new(&a.dir, &hash).unwrap();
    let mb = RunManifest::load_or_new(&b.dir, &hash).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for stage in ["corpus/", "train/", "influence/", "report/"] {
        let (x, y) = (ma.checksums_under(stage), mb.checksums_under(stage));
        let same = !x.is_empty() && x == y;
        ok &= same;
        detail.push(format!("{stage} {} files {}", x.len(), if same { "identical" } else { "differ" }));
    }
    ok &= ma.verify(&a.dir).unwrap().is_empty() && mb.verify(&b.dir).unwrap().is_empty();
    verdict(ok, detail.join(", "))
}

fn main() {
    let checks: [(u32, &str, fn() -> Verdict); 8] = [
        (1, "finite-difference gradient check", gradient_check),
        (2, "TracIn algebra", tracin_algebra),
        (3, "ranking equals brute-force re-scoring", ranking_matches_brute_force),
        (4, "contrastive probing ordering", contrastive_variants_beat_vanilla),
        (5, "component sensitivity orderings", component_sensitivity_orderings),
        (6, "copied-source retrieval", copied_source_retrieval),
        (7, "gap cut and ranking elbow", gap_cut_and_elbow),
        (8, "reproducible pipeline", runs_are_reproducible),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (n, name, check) in checks {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let v = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!("[{n}] {name}: {} ({})", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        if !v.ok {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
