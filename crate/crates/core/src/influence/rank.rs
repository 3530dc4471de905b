//! Influence rankings over a training subset and checkpoint selection.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cache::GradientCache;
use super::engine::score_matrix;
use super::probe::{Direction, ProbeVariant};
use super::selector::ComponentSelector;
use crate::corpus::{NoiseManifest, Provenance};
use crate::error::{Error, Result};
use crate::seqmodel::{GradientVector, LossHistory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedExample {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceRanking {
    pub probe_id: String,
    pub selector: ComponentSelector,
    pub variant: ProbeVariant,
    pub direction: Direction,
    pub epochs: Vec<u32>,
    pub entries: Vec<RankedExample>,
}

/// Descending scores for positive direction, ascending for negative; ties
/// by ascending id.
pub fn sort_entries(entries: &mut [RankedExample], direction: Direction) {
    entries.sort_by(|a, b| {
        let by_score = match direction {
            Direction::Positive => b.score.total_cmp(&a.score),
            Direction::Negative => a.score.total_cmp(&b.score),
        };
        by_score.then(a.id.cmp(&b.id))
    });
}

impl InfluenceRanking {
    pub fn new(
        probe_id: impl Into<String>,
        selector: ComponentSelector,
        variant: ProbeVariant,
        direction: Direction,
        epochs: Vec<u32>,
        mut entries: Vec<RankedExample>,
    ) -> Self {
        sort_entries(&mut entries, direction);
        InfluenceRanking { probe_id: probe_id.into(), selector, variant, direction, epochs, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// `rank,example_id,score,provenance`, ranks from 1.
    pub fn to_csv(&self, manifest: &NoiseManifest) -> String {
        let mut s = String::from("rank,example_id,score,provenance\n");
        for (r, e) in self.entries.iter().enumerate() {
            let prov = manifest.provenance_of(e.id).map_or_else(|| "unknown".to_string(), |p| p.to_string());
            let _ = writeln!(s, "{},{},{},{}", r + 1, e.id, e.score, prov);
        }
        s
    }
}

/// One parsed ranking CSV row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub id: u64,
    pub score: f64,
    pub provenance: Option<Provenance>,
}

pub fn parse_ranking_csv(text: &str, path: &Path) -> Result<Vec<CsvRow>> {
    let bad = |n: usize, reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: format!("line {}: {reason}", n + 1),
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "rank,example_id,score,provenance")) => {}
        _ => return Err(bad(0, "missing header")),
    }
    let mut out = Vec::new();
    for (n, line) in lines {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(bad(n, "expected 4 columns"));
        }
        let rank: usize = cols[0].parse().map_err(|_| bad(n, "rank"))?;
        if rank != out.len() + 1 {
            return Err(bad(n, "ranks must be consecutive"));
        }
        out.push(CsvRow {
            id: cols[1].parse().map_err(|_| bad(n, "example id"))?,
            score: cols[2].parse().map_err(|_| bad(n, "score"))?,
            provenance: cols[3].parse().ok(),
        });
    }
    Ok(out)
}

/// Ranks `subset` by TracIn against `probe` (one gradient per checkpoint,
/// in the order of `epochs`).
pub fn rank_subset(
    probe_id: &str,
    variant: ProbeVariant,
    probe: &[GradientVector],
    subset: &[u64],
    cache: &GradientCache,
    epochs: &[u32],
    sel: &ComponentSelector,
    direction: Direction,
) -> Result<InfluenceRanking> {
    let scores = score_matrix(cache, epochs, subset, &[probe.to_vec()], std::slice::from_ref(sel), 1)?;
    let entries = subset.iter().zip(&scores[0][0]).map(|(&id, &score)| RankedExample { id, score }).collect();
    Ok(InfluenceRanking::new(probe_id, sel.clone(), variant, direction, epochs.to_vec(), entries))
}

/// The `c - 1` epochs with the largest absolute change in validation loss
/// (epoch 1 compared with the initial loss) plus the final epoch, ascending.
/// Ties go to the earlier epoch.
pub fn select_checkpoints(history: &LossHistory, c: usize) -> Result<Vec<u32>> {
    if c == 0 {
        return Err(Error::InvalidConfig("checkpoint count must be >= 1".into()));
    }
    let Some(last) = history.epochs.last() else {
        return Err(Error::EmptyInput("validation-loss history".into()));
    };
    if c >= history.epochs.len() {
        return Ok(history.epochs.iter().map(|e| e.epoch).collect());
    }
    let mut prev = history.initial_val_loss;
    let mut deltas = Vec::with_capacity(history.epochs.len());
    for e in &history.epochs {
        deltas.push((e.epoch, (e.val_loss - prev).abs()));
        prev = e.val_loss;
    }
    deltas.pop();
    deltas.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<u32> = deltas.iter().take(c - 1).map(|d| d.0).collect();
    chosen.push(last.epoch);
    chosen.sort_unstable();
    chosen.dedup();
    Ok(chosen)
}
