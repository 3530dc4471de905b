//! Batched TracIn scoring of many probing gradients against cached
//! training gradients.
//!
//! Each cached record is read once per checkpoint and compared against all
//! probing vectors. Scores are bit-identical to [`super::tracin`] on the
//! same vectors.

use rayon::prelude::*;

use super::cache::GradientCache;
use super::selector::ComponentSelector;
use super::similarity::{combine, cosine_from_parts, span_dots, span_norms};
use crate::error::{Error, Result};
use crate::seqmodel::GradientVector;

const CHUNK: usize = 128;

/// TracIn scores indexed `[probe][selector][example]`, examples in the
/// order of `ids`.
///
/// `probes[p][k]` is the probing gradient of probe `p` at `epochs[k]`.
pub fn score_matrix(
    cache: &GradientCache,
    epochs: &[u32],
    ids: &[u64],
    probes: &[Vec<GradientVector>],
    selectors: &[ComponentSelector],
    workers: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if epochs.is_empty() {
        return Err(Error::CheckpointMismatch("no checkpoints".into()));
    }
    let layout = cache.layout().clone();
    for (p, per_epoch) in probes.iter().enumerate() {
        if per_epoch.len() != epochs.len() {
            return Err(Error::CheckpointMismatch(format!(
                "probe {p} has {} checkpoints, expected {}",
                per_epoch.len(),
                epochs.len()
            )));
        }
        for (g, &e) in per_epoch.iter().zip(epochs) {
            if g.origin.epoch != e {
                return Err(Error::CheckpointMismatch(format!(
                    "probe {p}: epoch {} where {e} was expected",
                    g.origin.epoch
                )));
            }
            if *g.layout != *layout {
                return Err(Error::IncompatibleGradient(format!("probe {p} layout differs from the cache")));
            }
        }
    }
    let missing = cache.missing(ids, epochs);
    if !missing.is_empty() {
        return Err(Error::CacheMiss { missing });
    }

    let spans: Vec<Vec<usize>> = selectors.iter().map(|s| s.resolve(&layout)).collect();
    let mut wanted = vec![false; layout.spans.len()];
    spans.iter().flatten().for_each(|&i| wanted[i] = true);
    let probe_norms: Vec<Vec<Vec<f64>>> =
        probes.iter().map(|per_epoch| per_epoch.iter().map(|g| span_norms(&layout, &g.data)).collect()).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let mut scores = vec![vec![vec![0.0f64; ids.len()]; selectors.len()]; probes.len()];
    for (k, &epoch) in epochs.iter().enumerate() {
        for (c, chunk) in ids.chunks(CHUNK).enumerate() {
            let cosines: Vec<Result<Vec<f64>>> = pool.install(|| {
                chunk
                    .par_iter()
                    .map_init(Vec::new, |buf, &id| {
                        cache.read_into(id, epoch, buf)?;
                        let train_norms = span_norms(&layout, buf);
                        let mut out = Vec::with_capacity(probes.len() * selectors.len());
                        for (p, per_epoch) in probes.iter().enumerate() {
                            let dots = span_dots(&layout, &wanted, &per_epoch[k].data, buf);
                            for s in &spans {
                                let (d, a, b) = combine(s, &dots, &probe_norms[p][k], &train_norms);
                                out.push(cosine_from_parts(d, a, b));
                            }
                        }
                        Ok(out)
                    })
                    .collect()
            });
            for (j, row) in cosines.into_iter().enumerate() {
                let row = row?;
                let n = c * CHUNK + j;
                for (p, per_probe) in scores.iter_mut().enumerate() {
                    for (s, per_sel) in per_probe.iter_mut().enumerate() {
                        per_sel[n] += row[p * selectors.len() + s];
                    }
                }
            }
        }
    }
    let count = epochs.len() as f64;
    for v in scores.iter_mut().flatten().flatten() {
        *v /= count;
    }
    Ok(scores)
}
