//! Precision of injected-noise retrieval over influence rankings.

use serde::{Deserialize, Serialize};

use crate::corpus::{NoiseManifest, ProbeTarget, Provenance};
use crate::error::{Error, Result};
use crate::influence::{ComponentSelector, Direction, InfluenceRanking, ProbeVariant};

/// One cell of the variant x selector grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub variant: ProbeVariant,
    pub selector: ComponentSelector,
    pub direction: Direction,
}

impl RetrievalConfig {
    pub fn of(ranking: &InfluenceRanking) -> Self {
        RetrievalConfig { variant: ranking.variant, selector: ranking.selector.clone(), direction: ranking.direction }
    }

    pub fn label(&self) -> String {
        format!("{}{} {}", self.direction.sign(), self.variant, self.selector)
    }
}

/// Whether `provenance` counts as a hit for probes of `target`.
pub fn is_hit(provenance: Option<Provenance>, target: ProbeTarget) -> bool {
    match (provenance, target) {
        (Some(Provenance::PatternNoise(p)), ProbeTarget::Pattern(t)) => p == t,
        (Some(Provenance::CopyNoise), ProbeTarget::Copy) => true,
        _ => false,
    }
}

/// `max(1, floor(x/100 * n))`.
pub fn top_k(n: usize, x_percent: f64) -> usize {
    ((x_percent / 100.0 * n as f64).floor() as usize).max(1)
}

fn check_x(x_percent: f64) -> Result<()> {
    if x_percent > 0.0 && x_percent <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("top-X% must be in (0, 100], got {x_percent}")))
    }
}

/// Fraction of hits among the first `top_k(ids.len(), x)` ids.
pub fn precision_of_ids(ids: &[u64], hit: impl Fn(u64) -> bool, x_percent: f64) -> Result<f64> {
    check_x(x_percent)?;
    if ids.is_empty() {
        return Err(Error::EmptyRanking);
    }
    let k = top_k(ids.len(), x_percent);
    let hits = ids[..k].iter().filter(|&&id| hit(id)).count();
    Ok(hits as f64 / k as f64)
}

pub fn precision_at_topx(
    ranking: &InfluenceRanking,
    manifest: &NoiseManifest,
    target: ProbeTarget,
    x_percent: f64,
) -> Result<f64> {
    let ids = ranking.ids();
    precision_of_ids(&ids, |id| is_hit(manifest.provenance_of(id), target), x_percent)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePrecision {
    pub probe_id: String,
    /// One value per requested top-X%.
    pub precision: Vec<f64>,
}

/// Per-probe precisions of one pattern under one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternPrecision {
    pub pattern: String,
    pub probes: Vec<ProbePrecision>,
}

impl PatternPrecision {
    /// Mean over probes per top-X%, or `None` without probes.
    pub fn mean(&self) -> Option<Vec<f64>> {
        let first = self.probes.first()?;
        let mut acc = vec![0.0; first.precision.len()];
        for p in &self.probes {
            for (a, v) in acc.iter_mut().zip(&p.precision) {
                *a += v;
            }
        }
        Some(acc.into_iter().map(|a| a / self.probes.len() as f64).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSummary {
    pub pattern: String,
    pub n_probes: usize,
    /// Empty when the pattern has no probes.
    pub mean: Vec<f64>,
    pub probes: Vec<ProbePrecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub config: RetrievalConfig,
    pub top_x: Vec<f64>,
    pub patterns: Vec<PatternSummary>,
    /// Unweighted mean over patterns that have probes.
    pub macro_avg: Vec<f64>,
}

/// Macro average: patterns count equally regardless of their probe counts.
/// Patterns without probes are reported but left out of the average.
pub fn macro_average(
    config: RetrievalConfig,
    top_x: &[f64],
    patterns: Vec<PatternPrecision>,
) -> Result<RetrievalReport> {
    let mut summaries = Vec::with_capacity(patterns.len());
    let mut acc = vec![0.0; top_x.len()];
    let mut counted = 0usize;
    for p in patterns {
        let mean = p.mean().unwrap_or_default();
        if !mean.is_empty() {
            if mean.len() != top_x.len() {
                return Err(Error::InvalidConfig(format!(
                    "pattern {} has {} precision columns, expected {}",
                    p.pattern,
                    mean.len(),
                    top_x.len()
                )));
            }
            counted += 1;
            acc.iter_mut().zip(&mean).for_each(|(a, m)| *a += m);
        }
        summaries.push(PatternSummary { pattern: p.pattern, n_probes: p.probes.len(), mean, probes: p.probes });
    }
    if counted == 0 {
        return Err(Error::EmptyInput("no pattern has probes".into()));
    }
    Ok(RetrievalReport {
        config,
        top_x: top_x.to_vec(),
        patterns: summaries,
        macro_avg: acc.into_iter().map(|a| a / counted as f64).collect(),
    })
}

/// Mean over all probes of all patterns, for comparison with the macro
/// average.
pub fn micro_average(patterns: &[PatternPrecision]) -> Option<Vec<f64>> {
    let all =
        PatternPrecision { pattern: String::new(), probes: patterns.iter().flat_map(|p| p.probes.clone()).collect() };
    all.mean()
}
