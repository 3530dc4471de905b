//! Cosine similarity, TracIn and raw dot-product influence.
//!
//! Dot products and squared norms are accumulated per layout span in 64-bit
//! over the 32-bit data, in a fixed order within a span (four interleaved
//! lanes, summed left to right). Selector values are
//! sums of span partials in layout order, so every code path that scores
//! the same pair of vectors produces the same bits.

use crate::error::{Error, Result};
use crate::seqmodel::{GradientVector, Layout};

use super::selector::ComponentSelector;

/// Restricted norms below this give similarity 0.
pub const NORM_FLOOR: f64 = 1e-12;

pub(crate) fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            lanes[k] += x[k] as f64 * y[k] as f64;
        }
    }
    let mut tail = 0.0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += *x as f64 * *y as f64;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + tail
}

/// Per-span squared norms of one vector.
pub(crate) fn span_norms(layout: &Layout, v: &[f32]) -> Vec<f64> {
    layout
        .spans
        .iter()
        .map(|s| {
            let x = &v[s.range()];
            dot_f64(x, x)
        })
        .collect()
}

/// Per-span dot products, restricted to the spans in `wanted`.
pub(crate) fn span_dots(layout: &Layout, wanted: &[bool], a: &[f32], b: &[f32]) -> Vec<f64> {
    layout.spans.iter().zip(wanted).map(|(s, &w)| if w { dot_f64(&a[s.range()], &b[s.range()]) } else { 0.0 }).collect()
}

pub(crate) fn combine(spans: &[usize], dots: &[f64], n1: &[f64], n2: &[f64]) -> (f64, f64, f64) {
    let (mut d, mut a, mut b) = (0.0, 0.0, 0.0);
    for &i in spans {
        d += dots[i];
        a += n1[i];
        b += n2[i];
    }
    (d, a, b)
}

pub(crate) fn cosine_from_parts(dot: f64, sq1: f64, sq2: f64) -> f64 {
    let (n1, n2) = (sq1.sqrt(), sq2.sqrt());
    if n1 < NORM_FLOOR || n2 < NORM_FLOOR {
        0.0
    } else {
        dot / (n1 * n2)
    }
}

fn parts(g1: &GradientVector, g2: &GradientVector, sel: &ComponentSelector) -> Result<(f64, f64, f64)> {
    g1.check_compatible(g2)?;
    let spans = sel.resolve(&g1.layout);
    let mut wanted = vec![false; g1.layout.spans.len()];
    spans.iter().for_each(|&i| wanted[i] = true);
    let dots = span_dots(&g1.layout, &wanted, &g1.data, &g2.data);
    let n1 = span_norms(&g1.layout, &g1.data);
    let n2 = span_norms(&g2.layout, &g2.data);
    Ok(combine(&spans, &dots, &n1, &n2))
}

pub fn cosine_similarity(g1: &GradientVector, g2: &GradientVector, sel: &ComponentSelector) -> Result<f64> {
    let (d, a, b) = parts(g1, g2, sel)?;
    Ok(cosine_from_parts(d, a, b))
}

fn check_checkpoints(probe: &[GradientVector], train: &[GradientVector]) -> Result<()> {
    if probe.is_empty() {
        return Err(Error::CheckpointMismatch("no checkpoints".into()));
    }
    if probe.len() != train.len() {
        return Err(Error::CheckpointMismatch(format!(
            "{} probe checkpoints vs {} training checkpoints",
            probe.len(),
            train.len()
        )));
    }
    for (p, t) in probe.iter().zip(train) {
        if p.origin.epoch != t.origin.epoch {
            return Err(Error::CheckpointMismatch(format!(
                "epoch {} paired with epoch {}",
                p.origin.epoch, t.origin.epoch
            )));
        }
    }
    Ok(())
}

/// Mean over checkpoints of the per-checkpoint cosine similarity.
pub fn tracin(probe: &[GradientVector], train: &[GradientVector], sel: &ComponentSelector) -> Result<f64> {
    check_checkpoints(probe, train)?;
    let mut total = 0.0;
    for (p, t) in probe.iter().zip(train) {
        total += cosine_similarity(p, t, sel)?;
    }
    Ok(total / probe.len() as f64)
}

/// Mean over checkpoints of the unnormalized dot product.
pub fn raw_dot_influence(probe: &[GradientVector], train: &[GradientVector], sel: &ComponentSelector) -> Result<f64> {
    check_checkpoints(probe, train)?;
    let mut total = 0.0;
    for (p, t) in probe.iter().zip(train) {
        total += parts(p, t, sel)?.0;
    }
    Ok(total / probe.len() as f64)
}
