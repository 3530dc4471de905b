//! Error-pattern and copied-source noise injection.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grammar::Grammar;
use super::{ErrorPattern, ParallelExample, Provenance};
use crate::error::{Error, Result};

/// Per-pattern instance counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternCounts {
    pub label: String,
    /// Training examples whose source contains the pattern word.
    pub matching: usize,
    /// Size of the training subset searched for this pattern.
    pub train: usize,
    /// Examples whose translation was corrupted.
    pub noisy: usize,
    /// Held-out probe sources for the pattern.
    pub probing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseManifest {
    pub provenance: BTreeMap<u64, Provenance>,
    pub patterns: BTreeMap<u32, PatternCounts>,
    pub copy_noise: usize,
}

impl NoiseManifest {
    pub fn from_corpus(corpus: &[ParallelExample]) -> Self {
        NoiseManifest {
            provenance: corpus.iter().map(|e| (e.id, e.provenance)).collect(),
            patterns: BTreeMap::new(),
            copy_noise: corpus.iter().filter(|e| e.provenance == Provenance::CopyNoise).count(),
        }
    }

    /// Combines with a manifest produced by a later injection step, whose
    /// provenance map describes the newer corpus.
    pub fn merge(mut self, later: NoiseManifest) -> Self {
        self.provenance = later.provenance;
        self.patterns.extend(later.patterns);
        self.copy_noise = later.copy_noise;
        self
    }

    pub fn provenance_of(&self, id: u64) -> Option<Provenance> {
        self.provenance.get(&id).copied()
    }

    pub fn noisy_ids(&self, pattern: u32) -> impl Iterator<Item = u64> + '_ {
        self.provenance.iter().filter(move |(_, p)| **p == Provenance::PatternNoise(pattern)).map(|(&id, _)| id)
    }

    /// Checks the manifest against `corpus`; returns one message per problem.
    pub fn verify(&self, corpus: &[ParallelExample]) -> Vec<String> {
        let mut problems = Vec::new();
        if self.provenance.len() != corpus.len() {
            problems.push(format!("manifest lists {} ids, corpus has {}", self.provenance.len(), corpus.len()));
        }
        for e in corpus {
            match self.provenance.get(&e.id) {
                Some(p) if *p == e.provenance => {}
                Some(p) => problems.push(format!("id {}: manifest says {p}, corpus says {}", e.id, e.provenance)),
                None => problems.push(format!("id {} missing from manifest", e.id)),
            }
        }
        for (&pid, counts) in &self.patterns {
            let noisy = corpus.iter().filter(|e| e.provenance == Provenance::PatternNoise(pid)).count();
            if noisy != counts.noisy {
                problems.push(format!("pattern {pid}: {} noisy in manifest, {noisy} in corpus", counts.noisy));
            }
        }
        let copies = corpus.iter().filter(|e| e.provenance == Provenance::CopyNoise).count();
        if copies != self.copy_noise {
            problems.push(format!("{} copies in manifest, {copies} in corpus", self.copy_noise));
        }
        problems
    }
}

/// Flips `correct_trg` to `wrong_trg` in clean examples whose source holds
/// `src_word`, one Bernoulli(p) draw per sentence. All occurrences in a
/// sentence flip together. Examples that already carry noise are left alone.
pub fn inject_pattern_noise(
    corpus: &[ParallelExample],
    pattern: &ErrorPattern,
    p: f64,
    seed: u64,
) -> Result<(Vec<ParallelExample>, NoiseManifest)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidConfig(format!("noise probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = corpus.to_vec();
    let mut counts = PatternCounts { label: pattern.label(), ..Default::default() };
    for e in &mut out {
        if !e.src_contains(&pattern.src_word) {
            continue;
        }
        counts.matching += 1;
        if e.provenance != Provenance::Clean || !e.trg_contains(&pattern.correct_trg) {
            continue;
        }
        if rng.gen_bool(p) {
            for w in e.trg.iter_mut().filter(|w| **w == pattern.correct_trg) {
                *w = pattern.wrong_trg.clone();
            }
            e.provenance = Provenance::PatternNoise(pattern.id);
            counts.noisy += 1;
        }
    }
    if counts.matching == 0 {
        log::warn!("pattern {}: `{}` never occurs in the corpus", pattern.id, pattern.src_word);
    }
    let mut manifest = NoiseManifest::from_corpus(&out);
    manifest.patterns.insert(pattern.id, counts);
    Ok((out, manifest))
}

/// Appends `floor(fraction * n)` pairs `(src, src)` whose sources are fresh
/// sentences from the grammar's copy template. Ids continue after the
/// largest existing id.
pub fn inject_copy_noise(
    corpus: &[ParallelExample],
    fraction: f64,
    seed: u64,
    grammar: &Grammar,
) -> Result<(Vec<ParallelExample>, NoiseManifest)> {
    if !(fraction >= 0.0) || !fraction.is_finite() {
        return Err(Error::InvalidConfig(format!("copy fraction {fraction} must be >= 0")));
    }
    let n = (fraction * corpus.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sources = grammar.sample_template(&grammar.copy_template, n, &mut rng)?;
    let mut next_id = corpus.iter().map(|e| e.id + 1).max().unwrap_or(0);
    let mut out = corpus.to_vec();
    for src in sources {
        out.push(ParallelExample { id: next_id, trg: src.clone(), src, provenance: Provenance::CopyNoise });
        next_id += 1;
    }
    let manifest = NoiseManifest::from_corpus(&out);
    Ok((out, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_clean_corpus, toy_error_patterns, CorpusSpec};

    fn corpus(n: usize) -> Vec<ParallelExample> {
        generate_clean_corpus(&CorpusSpec::toy(n, 5)).unwrap()
    }

    #[test]
    fn zero_probability_changes_nothing() {
        let c = corpus(500);
        let (out, m) = inject_pattern_noise(&c, &toy_error_patterns()[0], 0.0, 1).unwrap();
        assert_eq!(out, c);
        assert_eq!(m.patterns[&1].noisy, 0);
    }

    #[test]
    fn certain_flip_hits_every_match() {
        let c = corpus(500);
        let pat = &toy_error_patterns()[1];
        let (out, m) = inject_pattern_noise(&c, pat, 1.0, 1).unwrap();
        let matching = c.iter().filter(|e| e.src_contains(&pat.src_word)).count();
        assert_eq!(m.patterns[&2].noisy, matching);
        for e in out.iter().filter(|e| e.src_contains(&pat.src_word)) {
            assert_eq!(e.provenance, Provenance::PatternNoise(2));
            assert!(!e.trg_contains(&pat.correct_trg));
            assert!(e.trg_contains(&pat.wrong_trg));
        }
        assert_eq!(out.len(), c.len());
        assert!(m.verify(&out).is_empty());
    }

    #[test]
    fn noisy_count_is_binomial() {
        // 1000 sentences that all hold the pattern word
        let pat = &toy_error_patterns()[0];
        let c: Vec<ParallelExample> = (0..1000)
            .map(|id| ParallelExample {
                id,
                src: vec!["im".into(), "august".into()],
                trg: vec!["in".into(), "august".into()],
                provenance: Provenance::Clean,
            })
            .collect();
        for seed in 0..5 {
            let (_, m) = inject_pattern_noise(&c, pat, 0.6, seed).unwrap();
            let noisy = m.patterns[&1].noisy as f64;
            assert!((noisy - 600.0).abs() <= 3.0 * 240f64.sqrt(), "seed {seed}: {noisy}");
        }
    }

    #[test]
    fn absent_pattern_yields_empty_entry() {
        let c = corpus(50);
        let pat = ErrorPattern {
            id: 9,
            src_word: "nirgends".into(),
            correct_trg: "nowhere".into(),
            wrong_trg: "somewhere".into(),
        };
        let (out, m) = inject_pattern_noise(&c, &pat, 0.6, 1).unwrap();
        assert_eq!(out, c);
        assert_eq!(m.patterns[&9].matching, 0);
        assert_eq!(m.patterns[&9].noisy, 0);
    }

    #[test]
    fn earlier_noise_is_not_overwritten() {
        let c = vec![ParallelExample {
            id: 0,
            src: "august und deutschland".split(' ').map(String::from).collect(),
            trg: "august and germany".split(' ').map(String::from).collect(),
            provenance: Provenance::Clean,
        }];
        let pats = toy_error_patterns();
        let (c1, _) = inject_pattern_noise(&c, &pats[0], 1.0, 1).unwrap();
        let (c2, m) = inject_pattern_noise(&c1, &pats[1], 1.0, 1).unwrap();
        assert_eq!(c2[0].provenance, Provenance::PatternNoise(1));
        assert_eq!(c2[0].trg, vec!["january", "and", "germany"]);
        assert_eq!(m.patterns[&2].matching, 1);
        assert_eq!(m.patterns[&2].noisy, 0);
    }

    #[test]
    fn copy_noise_appends_floor_fraction() {
        let c = corpus(5000);
        let g = Grammar::toy();
        let (same, m) = inject_copy_noise(&c, 0.0, 1, &g).unwrap();
        assert_eq!(same, c);
        assert_eq!(m.copy_noise, 0);
        let (out, m) = inject_copy_noise(&c, 0.1, 1, &g).unwrap();
        assert_eq!(out.len(), 5500);
        assert_eq!(m.copy_noise, 500);
        for e in &out[5000..] {
            assert_eq!(e.src, e.trg);
            assert_eq!(e.provenance, Provenance::CopyNoise);
        }
        let ids: std::collections::BTreeSet<u64> = out.iter().map(|e| e.id).collect();
        assert_eq!(ids.len(), out.len());
        assert!(inject_copy_noise(&c, -0.1, 1, &g).is_err());
    }

    #[test]
    fn injection_is_deterministic() {
        let c = corpus(400);
        let pat = &toy_error_patterns()[2];
        assert_eq!(inject_pattern_noise(&c, pat, 0.6, 3).unwrap(), inject_pattern_noise(&c, pat, 0.6, 3).unwrap());
        let g = Grammar::toy();
        assert_eq!(inject_copy_noise(&c, 0.3, 3, &g).unwrap(), inject_copy_noise(&c, 0.3, 3, &g).unwrap());
    }
}
