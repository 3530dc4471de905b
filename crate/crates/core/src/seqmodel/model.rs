//! GRU encoder-decoder with dot-product attention, built on [`Tape`].
//!
//! Per step the decoder computes
//! `s_t = GRU(trgEmb[y_{t-1}] + pos[t], s_{t-1})`,
//! `ctx_t = sum_j softmax_j(s_t . h_j) h_j`,
//! `a_t = tanh(W_c [s_t; ctx_t] + b_c)` and `logits_t = W_out a_t`.
//! Position tables live in the encoder and decoder components; `W_out`
//! is the output component (the target embedding when tied).

use std::sync::Arc;

use super::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{Component, ComponentSpan, GradientOrigin, GradientVector, Layout, ParameterSet};
use super::tape::{NodeId, Tape};
use super::vocab::{BOS, EOS};
use crate::error::{Error, Result};

/// Source/target id sequences without BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedPair {
    pub src: Vec<u32>,
    pub trg: Vec<u32>,
}

/// How token losses are combined into the sentence loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    /// Divide by the number of unmasked positions.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy)]
struct GruOffsets {
    w_i: usize,
    w_h: usize,
    b_i: usize,
    b_h: usize,
    input_dim: usize,
}

#[derive(Debug, Clone)]
struct Tensors {
    src_emb: usize,
    trg_emb: usize,
    enc_pos: usize,
    enc: Vec<GruOffsets>,
    dec_pos: usize,
    dec: Vec<GruOffsets>,
    w_c: usize,
    b_c: usize,
    out: usize,
}

/// Model definition: shape plus the tensor and component tables derived from it.
#[derive(Debug, Clone)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    tensors: Tensors,
    layout: Arc<Layout>,
}

/// Forward pass result; the tape is sufficient for an exact backward pass.
pub struct Forward<'p, T> {
    pub loss: T,
    pub tape: Tape<'p, T>,
    pub loss_node: NodeId,
}

impl<T: Scalar> Forward<'_, T> {
    pub fn gradient(&self) -> Vec<T> {
        self.tape.backward(self.loss_node)
    }
}

struct Encoded {
    states: Vec<NodeId>,
    finals: Vec<NodeId>,
}

/// Decoder state for incremental decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    layers: Vec<NodeId>,
}

impl Seq2Seq {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let src_emb = take(config.src_vocab_size * e);
        let src_len = config.src_vocab_size * e;
        let trg_emb = take(config.trg_vocab_size * e);
        let trg_len = config.trg_vocab_size * e;

        let enc_start = src_len + trg_len;
        let enc_pos = take(config.max_positions * e);
        let gru = |take: &mut dyn FnMut(usize) -> usize, input_dim: usize| GruOffsets {
            w_i: take(3 * h * input_dim),
            w_h: take(3 * h * h),
            b_i: take(3 * h),
            b_h: take(3 * h),
            input_dim,
        };
        let enc: Vec<GruOffsets> =
            (0..config.num_encoder_layers).map(|l| gru(&mut take, if l == 0 { e } else { h })).collect();
        let dec_start = take(0);
        let dec_pos = take(config.max_positions * e);
        let dec: Vec<GruOffsets> =
            (0..config.num_decoder_layers).map(|l| gru(&mut take, if l == 0 { e } else { h })).collect();
        let w_c = take(h * 2 * h);
        let b_c = take(h);
        let out_start = take(0);
        let (out, out_len) = if config.tie_trg_embedding_and_output {
            (trg_emb, trg_len)
        } else {
            (take(config.trg_vocab_size * h), config.trg_vocab_size * h)
        };
        let total = take(0);

        let spans = vec![
            ComponentSpan { name: Component::SrcEmb, offset: src_emb, length: src_len },
            ComponentSpan { name: Component::TrgEmb, offset: trg_emb, length: trg_len },
            ComponentSpan { name: Component::Encoder, offset: enc_start, length: dec_start - enc_start },
            ComponentSpan { name: Component::Decoder, offset: dec_start, length: out_start - dec_start },
            ComponentSpan { name: Component::Output, offset: out, length: out_len },
        ];
        let layout = Arc::new(Layout::new(spans, total)?);
        Ok(Seq2Seq { config, tensors: Tensors { src_emb, trg_emb, enc_pos, enc, dec_pos, dec, w_c, b_c, out }, layout })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Parameters drawn from `uniform(-scale, scale)` in layout order.
    pub fn init_params<T: Scalar>(&self, seed: u64, scale: f64) -> ParameterSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..self.layout.total).map(|_| T::from_f64(rng.gen_range(-scale..scale))).collect();
        ParameterSet { layout: self.layout.clone(), values }
    }

    pub fn check_params<T>(&self, params: &ParameterSet<T>) -> Result<()> {
        if *params.layout != *self.layout || params.values.len() != self.layout.total {
            return Err(Error::IncompatibleGradient("parameter layout does not match the model config".into()));
        }
        Ok(())
    }

    fn check_ids(&self, pair: &EncodedPair) -> Result<()> {
        if pair.src.is_empty() {
            return Err(Error::InvalidExample("empty source".into()));
        }
        if pair.trg.is_empty() {
            return Err(Error::InvalidExample("empty target".into()));
        }
        if let Some(&bad) = pair.src.iter().find(|&&i| i as usize >= self.config.src_vocab_size) {
            return Err(Error::InvalidExample(format!("source id {bad} out of range")));
        }
        if let Some(&bad) = pair.trg.iter().find(|&&i| i as usize >= self.config.trg_vocab_size) {
            return Err(Error::InvalidExample(format!("target id {bad} out of range")));
        }
        Ok(())
    }

    fn position(&self, p: usize) -> usize {
        p.min(self.config.max_positions - 1)
    }

    fn gru<T: Scalar>(&self, t: &mut Tape<'_, T>, g: &GruOffsets, x: NodeId, h: NodeId) -> NodeId {
        let hd = self.config.hidden_dim;
        let wi = t.matvec(g.w_i, 3 * hd, g.input_dim, x);
        let bi = t.param(g.b_i, 3 * hd);
        let gi = t.add(wi, bi);
        let wh = t.matvec(g.w_h, 3 * hd, hd, h);
        let bh = t.param(g.b_h, 3 * hd);
        let gh = t.add(wh, bh);

        let (ir, hr) = (t.slice(gi, 0, hd), t.slice(gh, 0, hd));
        let r_pre = t.add(ir, hr);
        let r = t.sigmoid(r_pre);
        let (iz, hz) = (t.slice(gi, hd, hd), t.slice(gh, hd, hd));
        let z_pre = t.add(iz, hz);
        let z = t.sigmoid(z_pre);
        let (in_, hn) = (t.slice(gi, 2 * hd, hd), t.slice(gh, 2 * hd, hd));
        let rhn = t.mul(r, hn);
        let n_pre = t.add(in_, rhn);
        let n = t.tanh(n_pre);
        let diff = t.sub(h, n);
        let zd = t.mul(z, diff);
        t.add(n, zd)
    }

    fn encode<T: Scalar>(&self, t: &mut Tape<'_, T>, src: &[u32]) -> Encoded {
        let (e, hd) = (self.config.embed_dim, self.config.hidden_dim);
        let layers = self.tensors.enc.len();
        let zero = t.input(vec![T::zero(); hd]);
        let mut hidden = vec![zero; layers];
        let mut states = Vec::with_capacity(src.len());
        for (j, &w) in src.iter().enumerate() {
            let emb = t.param(self.tensors.src_emb + w as usize * e, e);
            let pos = t.param(self.tensors.enc_pos + self.position(j) * e, e);
            let mut x = t.add(emb, pos);
            for (l, g) in self.tensors.enc.iter().enumerate() {
                hidden[l] = self.gru(t, g, x, hidden[l]);
                x = hidden[l];
            }
            states.push(x);
        }
        Encoded { states, finals: hidden }
    }

    fn initial_state<T: Scalar>(&self, t: &mut Tape<'_, T>, enc: &Encoded) -> DecoderState {
        let hd = self.config.hidden_dim;
        let layers = (0..self.tensors.dec.len())
            .map(|l| match enc.finals.get(l) {
                Some(&f) => f,
                None => t.input(vec![T::zero(); hd]),
            })
            .collect();
        DecoderState { layers }
    }

    fn decoder_step<T: Scalar>(
        &self,
        t: &mut Tape<'_, T>,
        enc: &Encoded,
        state: &DecoderState,
        prev: u32,
        position: usize,
    ) -> (DecoderState, NodeId) {
        let (e, hd) = (self.config.embed_dim, self.config.hidden_dim);
        let emb = t.param(self.tensors.trg_emb + prev as usize * e, e);
        let pos = t.param(self.tensors.dec_pos + self.position(position) * e, e);
        let mut x = t.add(emb, pos);
        let mut layers = Vec::with_capacity(state.layers.len());
        for (g, &h) in self.tensors.dec.iter().zip(&state.layers) {
            x = self.gru(t, g, x, h);
            layers.push(x);
        }
        let scores = t.scores(x, &enc.states);
        let attn = t.softmax(scores);
        let ctx = t.mix(attn, &enc.states);
        let cat = t.concat(x, ctx);
        let wc = t.matvec(self.tensors.w_c, hd, 2 * hd, cat);
        let bc = t.param(self.tensors.b_c, hd);
        let pre = t.add(wc, bc);
        let att = t.tanh(pre);
        let logits = t.matvec(self.tensors.out, self.config.trg_vocab_size, hd, att);
        (DecoderState { layers }, logits)
    }

    /// Teacher-forced loss of `pair`.
    ///
    /// Loss positions are the target tokens followed by EOS. A mask covers
    /// the target tokens; the EOS position inherits the weight of the last
    /// target token, so disjoint masks add up linearly.
    pub fn forward_loss<'p, T: Scalar>(
        &self,
        params: &'p ParameterSet<T>,
        pair: &EncodedPair,
        mask: Option<&[u8]>,
        reduction: Reduction,
    ) -> Result<Forward<'p, T>> {
        self.check_params(params)?;
        self.check_ids(pair)?;
        let weights = position_weights(pair.trg.len(), mask)?;

        let mut t = Tape::new(&params.values);
        let last_weighted = weights.iter().rposition(|&w| w != 0);
        let Some(last_weighted) = last_weighted else {
            let zero = t.input(vec![T::zero()]);
            return Ok(Forward { loss: T::zero(), tape: t, loss_node: zero });
        };

        let enc = self.encode(&mut t, &pair.src);
        let mut state = self.initial_state(&mut t, &enc);
        let mut terms = Vec::with_capacity(weights.len());
        let mut prev = BOS;
        for (pos, &w) in weights.iter().enumerate().take(last_weighted + 1) {
            let gold = pair.trg.get(pos).copied().unwrap_or(EOS);
            let (next, logits) = self.decoder_step(&mut t, &enc, &state, prev, pos);
            if w != 0 {
                terms.push(t.cross_entropy(logits, gold as usize, T::one()));
            }
            state = next;
            prev = gold;
        }
        let total = t.sum(&terms);
        let loss_node = match reduction {
            Reduction::Sum => total,
            Reduction::Mean => t.scale(total, T::one() / T::from_f64(terms.len() as f64)),
        };
        Ok(Forward { loss: t.scalar(loss_node), tape: t, loss_node })
    }

    /// Loss and full parameter gradient for one example.
    pub fn loss_and_gradient<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        pair: &EncodedPair,
        mask: Option<&[u8]>,
        reduction: Reduction,
    ) -> Result<(T, Vec<T>)> {
        let fwd = self.forward_loss(params, pair, mask, reduction)?;
        let grad = fwd.gradient();
        Ok((fwd.loss, grad))
    }

    /// Batch-size-1 gradient at a checkpoint, stored in 32-bit.
    pub fn per_example_gradient(
        &self,
        params: &ParameterSet<f32>,
        pair: &EncodedPair,
        mask: Option<&[u8]>,
        origin: GradientOrigin,
    ) -> Result<GradientVector> {
        let (_, grad) = self.loss_and_gradient(params, pair, mask, Reduction::Mean)?;
        GradientVector::new(self.layout.clone(), grad, origin)
    }

    /// Log-probabilities over the target vocabulary for the next token, used by
    /// the decoder search.
    pub(crate) fn start<'p, T: Scalar>(
        &self,
        params: &'p ParameterSet<T>,
        src: &[u32],
    ) -> IncrementalDecoder<'_, 'p, T> {
        let mut tape = Tape::new(&params.values);
        let enc = self.encode(&mut tape, src);
        let init = self.initial_state(&mut tape, &enc);
        IncrementalDecoder { model: self, tape, enc, init }
    }
}

pub(crate) struct IncrementalDecoder<'m, 'p, T> {
    model: &'m Seq2Seq,
    tape: Tape<'p, T>,
    enc: Encoded,
    pub init: DecoderState,
}

impl<T: Scalar> IncrementalDecoder<'_, '_, T> {
    /// One decoder step; returns the new state and next-token log-probabilities.
    pub fn step(&mut self, state: &DecoderState, prev: u32, position: usize) -> (DecoderState, Vec<T>) {
        let (next, logits) = self.model.decoder_step(&mut self.tape, &self.enc, state, prev, position);
        let l = self.tape.value(logits);
        let lse = super::tape::log_sum_exp(l);
        (next, l.iter().map(|&x| x - lse).collect())
    }
}

fn position_weights(trg_len: usize, mask: Option<&[u8]>) -> Result<Vec<u8>> {
    match mask {
        None => Ok(vec![1; trg_len + 1]),
        Some(m) => {
            if m.len() != trg_len {
                return Err(Error::InvalidMask { expected: trg_len, got: m.len() });
            }
            if m.iter().any(|&v| v > 1) {
                return Err(Error::InvalidExample("mask entries must be 0 or 1".into()));
            }
            let mut w = m.to_vec();
            w.push(m[trg_len - 1]);
            Ok(w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::gradcheck::{check_config, random_pair};
    use proptest::prelude::*;

    fn setup(tied: bool, seed: u64) -> (Seq2Seq, ParameterSet<f64>, EncodedPair) {
        let model = Seq2Seq::new(check_config(tied)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = model.init_params(seed, 0.5);
        let pair = random_pair(&model.config, &mut rng, 3, 4);
        (model, params, pair)
    }

    #[test]
    fn one_dimensional_model_matches_hand_cross_entropy() {
        let config = ModelConfig {
            embed_dim: 1,
            hidden_dim: 1,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            tie_trg_embedding_and_output: false,
            src_vocab_size: 5,
            trg_vocab_size: 5,
            max_positions: 4,
        };
        let model = Seq2Seq::new(config).unwrap();
        let mut params = ParameterSet::<f64> { layout: model.layout().clone(), values: vec![0.0; model.num_params()] };
        // att = tanh(b_c) = 0.5 whatever the recurrent state; logits = w_out * 0.5
        params.values[model.tensors.b_c] = 0.5f64.atanh();
        let w_out = [0.0, 0.0, 1.0, 0.0, 2.0];
        let out = model.tensors.out;
        params.values[out..out + 5].copy_from_slice(&w_out);

        let pair = EncodedPair { src: vec![4], trg: vec![4] };
        let loss = model.forward_loss(&params, &pair, None, Reduction::Mean).unwrap().loss;

        let lse = (3.0 + 0.5f64.exp() + 1.0f64.exp()).ln();
        let expected = ((lse - 1.0) + (lse - 0.5)) / 2.0;
        assert!((loss - expected).abs() < 1e-14, "{loss} vs {expected}");
    }

    #[test]
    fn all_ones_mask_equals_unmasked() {
        let (model, params, pair) = setup(false, 4);
        let ones = vec![1u8; pair.trg.len()];
        let (l0, g0) = model.loss_and_gradient(&params, &pair, None, Reduction::Mean).unwrap();
        let (l1, g1) = model.loss_and_gradient(&params, &pair, Some(&ones), Reduction::Mean).unwrap();
        assert_eq!(l0, l1);
        assert_eq!(g0, g1);
    }

    #[test]
    fn zero_mask_gives_zero_loss_and_gradient() {
        let (model, params, pair) = setup(true, 5);
        let zeros = vec![0u8; pair.trg.len()];
        let (l, g) = model.loss_and_gradient(&params, &pair, Some(&zeros), Reduction::Mean).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(g.len(), model.num_params());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let (model, params, pair) = setup(false, 6);
        let err = model.forward_loss(&params, &pair, Some(&[1, 0]), Reduction::Mean).err().unwrap();
        assert!(matches!(err, Error::InvalidMask { expected: 4, got: 2 }));
        let empty = EncodedPair { src: pair.src.clone(), trg: vec![] };
        let err = model.forward_loss(&params, &empty, None, Reduction::Mean).err().unwrap();
        assert!(matches!(err, Error::InvalidExample(_)));
        let oov = EncodedPair { src: vec![99], trg: pair.trg.clone() };
        assert!(model.forward_loss(&params, &oov, None, Reduction::Mean).is_err());
    }

    #[test]
    fn per_example_gradient_is_deterministic() {
        let model = Seq2Seq::new(ModelConfig::toy(30, 30)).unwrap();
        let params = model.init_params::<f32>(9, 0.08);
        let pair = EncodedPair { src: vec![5, 6, 7], trg: vec![8, 9] };
        let origin = GradientOrigin { example_id: 1, epoch: 1, mask_id: None };
        let a = model.per_example_gradient(&params, &pair, None, origin.clone()).unwrap();
        let b = model.per_example_gradient(&params, &pair, None, origin).unwrap();
        assert_eq!(
            a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn slices_in_layout_order_rebuild_the_vector() {
        for tied in [false, true] {
            let (model, params, pair) = setup(tied, 7);
            let (_, g) = model.loss_and_gradient(&params, &pair, None, Reduction::Mean).unwrap();
            let g: Vec<f32> = g.iter().map(|&v| v as f32).collect();
            let gv = GradientVector::new(model.layout().clone(), g.clone(), GradientOrigin::default()).unwrap();
            let rebuilt: Vec<f32> = model.layout().unique_spans().flat_map(|s| gv.slice(s.name).to_vec()).collect();
            assert_eq!(rebuilt, g);
        }
    }

    #[test]
    fn tied_output_and_target_embedding_are_the_same_view() {
        let (model, params, pair) = setup(true, 8);
        let (_, g) = model.loss_and_gradient(&params, &pair, None, Reduction::Mean).unwrap();
        let g: Vec<f32> = g.iter().map(|&v| v as f32).collect();
        let gv = GradientVector::new(model.layout().clone(), g, GradientOrigin::default()).unwrap();
        let (a, b) = (gv.slice(Component::Output), gv.slice(Component::TrgEmb));
        assert_eq!(a.as_ptr(), b.as_ptr());
        assert_eq!(a.len(), b.len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn disjoint_masks_add_linearly_under_sum(seed in 0u64..1000, bits in proptest::collection::vec(0u8..3, 4)) {
            let (model, params, pair) = setup(seed % 2 == 0, seed);
            // 0: neither, 1: first mask, 2: second mask
            let m1: Vec<u8> = bits.iter().map(|&b| u8::from(b == 1)).collect();
            let m2: Vec<u8> = bits.iter().map(|&b| u8::from(b == 2)).collect();
            let both: Vec<u8> = bits.iter().map(|&b| u8::from(b != 0)).collect();
            let grad = |m: &[u8]| model.loss_and_gradient(&params, &pair, Some(m), Reduction::Sum).unwrap();
            let (l1, g1) = grad(&m1);
            let (l2, g2) = grad(&m2);
            let (l12, g12) = grad(&both);
            prop_assert!((l1 + l2 - l12).abs() < 1e-12);
            for i in 0..g12.len() {
                prop_assert!((g1[i] + g2[i] - g12[i]).abs() < 1e-12, "param {}", i);
            }
        }
    }
}
