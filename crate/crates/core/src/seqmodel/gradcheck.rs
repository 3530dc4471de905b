//! Central-difference validation of the backward pass in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::model::{EncodedPair, Reduction, Seq2Seq};
use super::params::ParameterSet;
use super::scalar::{DoubleDouble, Scalar};
use crate::error::{Error, Result};

pub const MAX_CHECK_PARAMS: usize = 500;
pub const FD_STEP: f64 = 1e-6;
const CHECK_INIT_SCALE: f64 = 0.5;

/// A random example over the non-special ids of `config`'s vocabularies.
pub fn random_pair(config: &ModelConfig, rng: &mut impl Rng, src_len: usize, trg_len: usize) -> EncodedPair {
    let src = (0..src_len).map(|_| rng.gen_range(4..config.src_vocab_size as u32)).collect();
    let trg = (0..trg_len).map(|_| rng.gen_range(4..config.trg_vocab_size as u32)).collect();
    EncodedPair { src, trg }
}

/// Max over parameters of `|analytic - central| / (|analytic| + 1e-12)`.
pub fn finite_difference_check(config: &ModelConfig, seed: u64) -> Result<f64> {
    finite_difference_check_masked(config, seed, None)
}

pub fn finite_difference_check_masked(config: &ModelConfig, seed: u64, mask: Option<&[u8]>) -> Result<f64> {
    let model = Seq2Seq::new(config.clone())?;
    if model.num_params() > MAX_CHECK_PARAMS {
        return Err(Error::InvalidConfig(format!(
            "gradient check needs <= {MAX_CHECK_PARAMS} parameters, model has {}",
            model.num_params()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = model.init_params::<f64>(rng.gen(), CHECK_INIT_SCALE);
    let trg_len = mask.map_or(3, <[u8]>::len);
    let pair = random_pair(config, &mut rng, 4, trg_len);

    let (_, analytic) = model.loss_and_gradient(&params, &pair, mask, Reduction::Mean)?;

    // Difference quotients in double-double: f64 roundoff in the loss becomes
    // ~1e-10 absolute after dividing by 2h, larger than some true gradients.
    let mut probe: ParameterSet<DoubleDouble> = ParameterSet {
        layout: params.layout.clone(),
        values: params.values.iter().map(|&v| DoubleDouble::new(v)).collect(),
    };
    let h = DoubleDouble::new(FD_STEP);
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let up = model.forward_loss(&probe, &pair, mask, Reduction::Mean)?.loss;
        probe.values[i] = orig - h;
        let down = model.forward_loss(&probe, &pair, mask, Reduction::Mean)?.loss;
        probe.values[i] = orig;
        let numeric = ((up - down) / (h * DoubleDouble::new(2.0))).to_f64();
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// Small config used by `check-grad`: 3-wide, 6-token vocabularies.
pub fn check_config(tied: bool) -> ModelConfig {
    ModelConfig {
        embed_dim: 3,
        hidden_dim: 3,
        num_encoder_layers: 1,
        num_decoder_layers: 1,
        tie_trg_embedding_and_output: tied,
        src_vocab_size: 6,
        trg_vocab_size: 6,
        max_positions: 5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn check_config_is_small_enough() {
        for tied in [false, true] {
            let m = Seq2Seq::new(check_config(tied)).unwrap();
            assert!(m.num_params() <= MAX_CHECK_PARAMS, "{}", m.num_params());
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        for seed in [1, 2] {
            for tied in [false, true] {
                let err = finite_difference_check(&check_config(tied), seed).unwrap();
                assert!(err <= 1e-5, "seed {seed} tied {tied}: {err}");
            }
        }
    }

    #[test]
    fn fully_masked_loss_has_zero_error() {
        let err = finite_difference_check_masked(&check_config(false), 3, Some(&[0, 0, 0])).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn oversized_model_is_rejected() {
        assert!(finite_difference_check(&ModelConfig::toy(20, 20), 1).is_err());
    }
}
