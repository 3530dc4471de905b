//! How influence under each component reacts to perturbing one side of a
//! sentence pair.

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelExample;
use crate::error::{Error, Result};
use crate::influence::{tracin, ComponentSelector, GradientSource};
use crate::seqmodel::{CheckpointSnapshot, GradientOrigin, GradientVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    Identical,
    RandomSource,
    RandomTarget,
    PunctSrc,
    PunctTrg,
}

impl Perturbation {
    pub const ALL: [Perturbation; 5] = [
        Perturbation::Identical,
        Perturbation::RandomSource,
        Perturbation::RandomTarget,
        Perturbation::PunctSrc,
        Perturbation::PunctTrg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Perturbation::Identical => "identical",
            Perturbation::RandomSource => "random-source",
            Perturbation::RandomTarget => "random-target",
            Perturbation::PunctSrc => "punct-src",
            Perturbation::PunctTrg => "punct-trg",
        }
    }
}

/// Drops a trailing "." or appends one.
fn toggle_punct(words: &[String]) -> Vec<String> {
    let mut out = words.to_vec();
    if out.last().is_some_and(|w| w == ".") {
        out.pop();
    } else {
        out.push(".".into());
    }
    out
}

/// The pair compared against `(src, trg)` under `kind`. Random variants take
/// the varying side from `donor`.
pub fn perturb(
    kind: Perturbation,
    src: &[String],
    trg: &[String],
    donor: &ParallelExample,
) -> (Vec<String>, Vec<String>) {
    match kind {
        Perturbation::Identical => (src.to_vec(), trg.to_vec()),
        Perturbation::RandomSource => (donor.src.clone(), trg.to_vec()),
        Perturbation::RandomTarget => (src.to_vec(), donor.trg.clone()),
        Perturbation::PunctSrc => (toggle_punct(src), trg.to_vec()),
        Perturbation::PunctTrg => (src.to_vec(), toggle_punct(trg)),
    }
}

/// Gradients of arbitrary pairs at a fixed list of checkpoints.
pub struct PairScorer<'a> {
    pub source: &'a GradientSource<'a>,
    pub snapshots: &'a [CheckpointSnapshot],
}

impl PairScorer<'_> {
    pub fn gradients(&self, src: &[String], trg: &[String]) -> Result<Vec<GradientVector>> {
        if self.snapshots.is_empty() {
            return Err(Error::EmptyInput("no checkpoints".into()));
        }
        self.snapshots
            .iter()
            .map(|s| {
                let origin = GradientOrigin { example_id: 0, epoch: s.epoch, mask_id: None };
                self.source.gradient(s, src, trg, None, origin)
            })
            .collect()
    }

    fn scores(&self, a: &[GradientVector], b: &[GradientVector], selectors: &[ComponentSelector]) -> Result<Vec<f64>> {
        selectors.iter().map(|sel| tracin(a, b, sel)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub perturbation: Perturbation,
    pub src: Vec<String>,
    pub trg: Vec<String>,
    /// One TracIn score per selector.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub probe_src: Vec<String>,
    pub probe_trg: Vec<String>,
    pub selectors: Vec<ComponentSelector>,
    pub epochs: Vec<u32>,
    pub rows: Vec<SensitivityRow>,
}

/// TracIn of the probe pair against each perturbed pair, per selector.
pub fn sensitivity_matrix(
    scorer: &PairScorer<'_>,
    probe: &ParallelExample,
    donor: &ParallelExample,
    perturbations: &[Perturbation],
    selectors: &[ComponentSelector],
) -> Result<SensitivityMatrix> {
    let base = scorer.gradients(&probe.src, &probe.trg)?;
    let mut rows = Vec::with_capacity(perturbations.len());
    for &kind in perturbations {
        let (src, trg) = perturb(kind, &probe.src, &probe.trg, donor);
        let g = scorer.gradients(&src, &trg)?;
        rows.push(SensitivityRow { perturbation: kind, scores: scorer.scores(&base, &g, selectors)?, src, trg });
    }
    Ok(SensitivityMatrix {
        probe_src: probe.src.clone(),
        probe_trg: probe.trg.clone(),
        selectors: selectors.to_vec(),
        epochs: scorer.snapshots.iter().map(|s| s.epoch).collect(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    /// Pool sources paired with the probe target.
    RandomSource,
    /// The probe source paired with pool targets.
    RandomTarget,
}

/// Mean |TracIn| per selector between the probe and the probe with one side
/// replaced by each pool sentence in turn.
pub fn random_pairing_stats(
    scorer: &PairScorer<'_>,
    probe: &ParallelExample,
    pool: &[ParallelExample],
    selectors: &[ComponentSelector],
    mode: PairingMode,
) -> Result<Vec<f64>> {
    if pool.is_empty() {
        return Err(Error::EmptyInput("random-pairing pool".into()));
    }
    let kind = match mode {
        PairingMode::RandomSource => Perturbation::RandomSource,
        PairingMode::RandomTarget => Perturbation::RandomTarget,
    };
    let base = scorer.gradients(&probe.src, &probe.trg)?;
    let mut totals = vec![0.0f64; selectors.len()];
    for donor in pool {
        let (src, trg) = perturb(kind, &probe.src, &probe.trg, donor);
        let g = scorer.gradients(&src, &trg)?;
        for (t, s) in totals.iter_mut().zip(scorer.scores(&base, &g, selectors)?) {
            *t += s.abs();
        }
    }
    Ok(totals.into_iter().map(|t| t / pool.len() as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_clean_corpus, CorpusSpec, Provenance};
    use crate::seqmodel::{ModelConfig, Seq2Seq};

    fn example(src: &str, trg: &str) -> ParallelExample {
        ParallelExample {
            id: 0,
            src: src.split(' ').map(String::from).collect(),
            trg: trg.split(' ').map(String::from).collect(),
            provenance: Provenance::Clean,
        }
    }

    #[test]
    fn perturbations_change_one_side() {
        let p = example("der hund lief .", "the dog ran .");
        let d = example("ein haus", "a house");
        assert_eq!(perturb(Perturbation::RandomSource, &p.src, &p.trg, &d), (d.src.clone(), p.trg.clone()));
        assert_eq!(perturb(Perturbation::RandomTarget, &p.src, &p.trg, &d), (p.src.clone(), d.trg.clone()));
        assert_eq!(perturb(Perturbation::PunctSrc, &p.src, &p.trg, &d).0.len(), 3);
        assert_eq!(perturb(Perturbation::PunctTrg, &d.src, &d.trg, &p).1.last().unwrap(), ".");
    }

    #[test]
    fn identical_row_is_one_and_self_pool_is_one() {
        let spec = CorpusSpec::toy(4, 3);
        let corpus = generate_clean_corpus(&spec).unwrap();
        let (sv, tv) = spec.lexicon.vocabularies();
        let model = Seq2Seq::new(ModelConfig::toy(sv.len(), tv.len())).unwrap();
        let snapshots: Vec<CheckpointSnapshot> = (1..=2)
            .map(|e| CheckpointSnapshot { epoch: e, params: model.init_params(e as u64, 0.2), validation_loss: 0.0 })
            .collect();
        let source = GradientSource { model: &model, src_vocab: &sv, trg_vocab: &tv };
        let scorer = PairScorer { source: &source, snapshots: &snapshots };
        let sels = ComponentSelector::defaults();
        let m = sensitivity_matrix(&scorer, &corpus[0], &corpus[1], &Perturbation::ALL, &sels).unwrap();
        assert_eq!(m.epochs, vec![1, 2]);
        for s in &m.rows[0].scores {
            assert!((s - 1.0).abs() < 1e-6, "{s}");
        }
        for mode in [PairingMode::RandomSource, PairingMode::RandomTarget] {
            let v = random_pairing_stats(&scorer, &corpus[0], &corpus[..1], &sels, mode).unwrap();
            assert!(v.iter().all(|s| (s - 1.0).abs() < 1e-6), "{v:?}");
        }
        assert!(random_pairing_stats(&scorer, &corpus[0], &[], &sels, PairingMode::RandomSource).is_err());
    }
}
