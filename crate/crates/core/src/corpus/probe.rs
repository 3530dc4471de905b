//! Probing subsets of the training data and probe cases from held-out data.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ErrorPattern, ParallelExample, Provenance};
use crate::seqmodel::{decode, ParameterSet, Seq2Seq, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    Pattern(u32),
    Copy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeCase {
    pub id: String,
    /// Id of the held-out example the source came from.
    pub source_id: u64,
    pub src: Vec<String>,
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
    pub corrected_hypothesis: Vec<String>,
    pub target: ProbeTarget,
}

/// A held-out source whose translation did not show the error.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedProbe {
    pub source_id: u64,
    pub hypothesis: Vec<String>,
    pub target: ProbeTarget,
}

/// Beam-search translation with a fixed checkpoint.
pub struct Translator<'a> {
    pub model: &'a Seq2Seq,
    pub params: &'a ParameterSet<f32>,
    pub src_vocab: &'a Vocabulary,
    pub trg_vocab: &'a Vocabulary,
    pub beam: usize,
}

impl Translator<'_> {
    pub fn translate(&self, src: &[String]) -> Vec<String> {
        let ids = self.src_vocab.encode(src);
        let out = decode(self.model, self.params, &ids, self.beam);
        self.trg_vocab.decode(&out)
    }
}

/// `hyp` with every `wrong_trg` replaced by `correct_trg`.
pub fn corrected_hypothesis(hyp: &[String], pattern: &ErrorPattern) -> Vec<String> {
    hyp.iter().map(|w| if *w == pattern.wrong_trg { pattern.correct_trg.clone() } else { w.clone() }).collect()
}

fn random_ids(corpus: &[ParallelExample], n_random: usize, seed: u64) -> impl Iterator<Item = u64> + '_ {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(n_random);
    order.into_iter().map(move |i| corpus[i].id)
}

fn collect_subset(corpus: &[ParallelExample], ids: BTreeSet<u64>) -> Vec<ParallelExample> {
    let mut out: Vec<ParallelExample> = corpus.iter().filter(|e| ids.contains(&e.id)).cloned().collect();
    out.sort_by_key(|e| e.id);
    out
}

/// Every example holding the pattern word, its correct or its wrong
/// translation on either side, plus the first `n_random` examples of a
/// seeded permutation of the corpus. Sorted by id, no duplicates.
///
/// The permutation depends only on `(corpus, seed)`, so subsets for
/// different patterns share their random part.
pub fn build_probing_subset(
    corpus: &[ParallelExample],
    pattern: &ErrorPattern,
    n_random: usize,
    seed: u64,
) -> Vec<ParallelExample> {
    let words = [&pattern.src_word, &pattern.correct_trg, &pattern.wrong_trg];
    let mut ids: BTreeSet<u64> =
        corpus.iter().filter(|e| words.iter().any(|w| e.src_contains(w) || e.trg_contains(w))).map(|e| e.id).collect();
    ids.extend(random_ids(corpus, n_random, seed));
    collect_subset(corpus, ids)
}

/// All copied-source examples plus `n_random` sampled as in
/// [`build_probing_subset`].
pub fn build_copy_subset(corpus: &[ParallelExample], n_random: usize, seed: u64) -> Vec<ParallelExample> {
    let mut ids: BTreeSet<u64> =
        corpus.iter().filter(|e| e.provenance == Provenance::CopyNoise).map(|e| e.id).collect();
    ids.extend(random_ids(corpus, n_random, seed));
    collect_subset(corpus, ids)
}

/// Probe cases from held-out examples whose source holds `pattern.src_word`
/// and whose translation shows `pattern.wrong_trg`. Stops after `max_probes`
/// accepted cases. Rejected sources are logged and returned.
pub fn build_probe_cases(
    translator: &Translator<'_>,
    test: &[ParallelExample],
    pattern: &ErrorPattern,
    max_probes: Option<usize>,
) -> (Vec<ProbeCase>, Vec<DroppedProbe>) {
    let target = ProbeTarget::Pattern(pattern.id);
    let mut cases = Vec::new();
    let mut dropped = Vec::new();
    for e in test.iter().filter(|e| e.src_contains(&pattern.src_word)) {
        if max_probes.is_some_and(|m| cases.len() >= m) {
            break;
        }
        let hypothesis = translator.translate(&e.src);
        if !hypothesis.contains(&pattern.wrong_trg) {
            log::info!(
                "pattern {}: dropping probe {} (hypothesis `{}` lacks `{}`)",
                pattern.id,
                e.id,
                hypothesis.join(" "),
                pattern.wrong_trg
            );
            dropped.push(DroppedProbe { source_id: e.id, hypothesis, target });
            continue;
        }
        cases.push(ProbeCase {
            id: format!("p{}-{:03}", pattern.id, cases.len()),
            source_id: e.id,
            src: e.src.clone(),
            corrected_hypothesis: corrected_hypothesis(&hypothesis, pattern),
            hypothesis,
            reference: e.trg.clone(),
            target,
        });
    }
    (cases, dropped)
}

/// Probe cases from held-out examples the model copies verbatim. The
/// corrected hypothesis is the reference.
pub fn build_copy_probe_cases(
    translator: &Translator<'_>,
    test: &[ParallelExample],
    max_probes: Option<usize>,
) -> (Vec<ProbeCase>, Vec<DroppedProbe>) {
    let mut cases = Vec::new();
    let mut dropped = Vec::new();
    for e in test {
        if max_probes.is_some_and(|m| cases.len() >= m) {
            break;
        }
        let hypothesis = translator.translate(&e.src);
        if hypothesis != e.src {
            log::info!("copy: dropping probe {} (not copied: `{}`)", e.id, hypothesis.join(" "));
            dropped.push(DroppedProbe { source_id: e.id, hypothesis, target: ProbeTarget::Copy });
            continue;
        }
        cases.push(ProbeCase {
            id: format!("copy-{:03}", cases.len()),
            source_id: e.id,
            src: e.src.clone(),
            hypothesis,
            reference: e.trg.clone(),
            corrected_hypothesis: e.trg.clone(),
            target: ProbeTarget::Copy,
        });
    }
    (cases, dropped)
}
