//! Thresholding analyses: largest influence per probe, largest-gap cuts
//! and ranking curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::retrieval::RetrievalConfig;
use crate::error::{Error, Result};
use crate::influence::{Direction, InfluenceRanking};

/// Scores in retrieval order, negated for negative-direction rankings so
/// that the sequence is non-increasing.
pub fn oriented_scores(ranking: &InfluenceRanking) -> Vec<f64> {
    let sign = match ranking.direction {
        Direction::Positive => 1.0,
        Direction::Negative => -1.0,
    };
    ranking.entries.iter().map(|e| sign * e.score).collect()
}

/// Number of instances before the largest consecutive drop. Ties go to the
/// earliest drop.
pub fn largest_gap_cut(scores: &[f64]) -> Result<usize> {
    if scores.len() < 2 {
        return Err(Error::EmptyInput(format!("gap cut needs >= 2 scores, got {}", scores.len())));
    }
    let mut best = 0;
    let mut best_gap = f64::NEG_INFINITY;
    for (i, w) in scores.windows(2).enumerate() {
        let gap = w[0] - w[1];
        if gap > best_gap {
            best_gap = gap;
            best = i;
        }
    }
    Ok(best + 1)
}

/// Gap cut over the positively influential prefix of a ranking (oriented
/// scores > 0). With fewer than two such instances the whole prefix is cut.
pub fn positive_gap_cut(ranking: &InfluenceRanking) -> usize {
    let scores = oriented_scores(ranking);
    let n_pos = scores.iter().take_while(|&&s| s > 0.0).count();
    if n_pos < 2 {
        return n_pos;
    }
    largest_gap_cut(&scores[..n_pos]).unwrap_or(n_pos)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub group: String,
    pub config: RetrievalConfig,
    pub n_probes: usize,
    /// Top-1 oriented score per probe.
    pub max_mean: f64,
    pub max_std: f64,
    pub cut_mean: f64,
    pub cut_std: f64,
}

/// Statistics of the largest influence and of the positive gap cut, per
/// group of rankings sharing a configuration. Standard deviations are
/// population deviations.
pub fn max_influence_stats(
    groups: &[(String, RetrievalConfig, Vec<&InfluenceRanking>)],
) -> Result<Vec<ThresholdStats>> {
    let mut out = Vec::with_capacity(groups.len());
    for (group, config, rankings) in groups {
        if rankings.is_empty() {
            return Err(Error::EmptyInput(format!("no rankings for {group} {}", config.label())));
        }
        let mut maxima = Vec::with_capacity(rankings.len());
        for r in rankings {
            let top = oriented_scores(r).first().copied().ok_or(Error::EmptyRanking)?;
            maxima.push(top);
        }
        let cuts: Vec<f64> = rankings.iter().map(|r| positive_gap_cut(r) as f64).collect();
        let (max_mean, max_std) = mean_std(&maxima);
        let (cut_mean, cut_std) = mean_std(&cuts);
        out.push(ThresholdStats {
            group: group.clone(),
            config: config.clone(),
            n_probes: rankings.len(),
            max_mean,
            max_std,
            cut_mean,
            cut_std,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingCurve {
    pub probe_id: String,
    pub config: RetrievalConfig,
    /// Oriented scores, non-increasing.
    pub scores: Vec<f64>,
}

impl RankingCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,score\n");
        for (r, v) in self.scores.iter().enumerate() {
            let _ = writeln!(s, "{},{}", r + 1, v);
        }
        s
    }

    /// Position of the largest drop, `None` for fewer than two points.
    pub fn elbow(&self) -> Option<usize> {
        largest_gap_cut(&self.scores).ok()
    }
}

pub fn ranking_curve(ranking: &InfluenceRanking, n: usize) -> Result<RankingCurve> {
    if n == 0 {
        return Err(Error::InvalidConfig("curve length must be >= 1".into()));
    }
    let mut scores = oriented_scores(ranking);
    scores.truncate(n);
    Ok(RankingCurve { probe_id: ranking.probe_id.clone(), config: RetrievalConfig::of(ranking), scores })
}
