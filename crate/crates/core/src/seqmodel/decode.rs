//! Greedy and beam-search decoding.

use std::cmp::Ordering;

use super::model::{DecoderState, Seq2Seq};
use super::params::ParameterSet;
use super::vocab::{BOS, EOS, PAD};

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Output ids without the terminating EOS.
    pub tokens: Vec<u32>,
    /// Sum of token log-probabilities, including EOS when emitted.
    pub score: f64,
}

pub fn max_decode_len(src_len: usize) -> usize {
    2 * src_len + 5
}

/// Decodes `src` with beam width `beam` (1 is greedy argmax decoding).
pub fn decode(model: &Seq2Seq, params: &ParameterSet<f32>, src: &[u32], beam: usize) -> Vec<u32> {
    beam_search(model, params, src, beam).tokens
}

struct Live {
    tokens: Vec<u32>,
    score: f64,
    state: DecoderState,
}

pub fn beam_search(model: &Seq2Seq, params: &ParameterSet<f32>, src: &[u32], beam: usize) -> Hypothesis {
    assert!(beam >= 1, "beam must be >= 1");
    assert!(!src.is_empty(), "source must be nonempty");
    let max_len = max_decode_len(src.len());
    let mut dec = model.start(params, src);
    let mut alive = vec![Live { tokens: Vec::new(), score: 0.0, state: dec.init.clone() }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for pos in 0..=max_len {
        // (score, parent, token, state)
        let mut cands: Vec<(f64, usize, u32, DecoderState)> = Vec::new();
        for (h, live) in alive.iter().enumerate() {
            let prev = live.tokens.last().copied().unwrap_or(BOS);
            let (next, logp) = dec.step(&live.state, prev, pos);
            let mut order: Vec<(u32, f64)> = logp
                .iter()
                .enumerate()
                .filter(|&(id, _)| id as u32 != PAD && id as u32 != BOS)
                .map(|(id, &lp)| (id as u32, lp as f64))
                .collect();
            if pos == max_len {
                // out of room: the only continuation is to stop
                order.retain(|&(id, _)| id == EOS);
            }
            order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
            for &(id, lp) in order.iter().take(beam) {
                cands.push((live.score + lp, h, id, next.clone()));
            }
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next_alive = Vec::with_capacity(beam);
        for (score, parent, id, state) in cands.into_iter().take(beam) {
            let mut tokens = alive[parent].tokens.clone();
            if id == EOS {
                finished.push(Hypothesis { tokens, score });
            } else {
                tokens.push(id);
                next_alive.push(Live { tokens, score, state });
            }
        }
        alive = next_alive;
        let best_finished = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        let best_alive = alive.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        // scores only decrease, so no live hypothesis can overtake
        if alive.is_empty() || best_finished >= best_alive {
            break;
        }
    }
    finished
        .into_iter()
        .fold(None::<Hypothesis>, |best, h| match best {
            Some(b) if b.score >= h.score => Some(b),
            _ => Some(h),
        })
        .expect("beam search always finishes at least one hypothesis")
}
