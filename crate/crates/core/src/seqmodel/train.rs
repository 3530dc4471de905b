//! Single-threaded minibatch training with Adam.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::CheckpointSnapshot;
use super::model::{EncodedPair, Reduction, Seq2Seq};
use super::params::ParameterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    pub seed: u64,
    /// Epochs at which snapshots are kept, each in `1..=epochs`.
    pub checkpoint_epochs: Vec<u32>,
}

fn default_betas() -> (f64, f64) {
    (0.9, 0.98)
}

fn default_eps() -> f64 {
    1e-8
}

fn default_init_scale() -> f64 {
    0.2
}

impl TrainOptions {
    pub fn toy(seed: u64, epochs: u32) -> Self {
        TrainOptions {
            epochs,
            batch_size: 16,
            learning_rate: 5e-3,
            betas: default_betas(),
            eps: default_eps(),
            init_scale: default_init_scale(),
            seed,
            checkpoint_epochs: (1..=epochs).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Validation loss of the initial parameters.
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }

    pub fn val_losses(&self) -> Vec<(u32, f64)> {
        self.epochs.iter().map(|e| (e.epoch, e.val_loss)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub snapshots: Vec<CheckpointSnapshot>,
    pub history: LossHistory,
    pub final_params: ParameterSet<f32>,
}

/// Mean per-example loss over `data`, accumulated in 64-bit in input order.
pub fn mean_loss(model: &Seq2Seq, params: &ParameterSet<f32>, data: &[EncodedPair]) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0f64;
    for pair in data {
        total += model.forward_loss(params, pair, None, Reduction::Mean)?.loss as f64;
    }
    Ok(total / data.len() as f64)
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f32], grad: &[f32], opts: &TrainOptions) {
        self.step += 1;
        let (b1, b2) = (opts.betas.0 as f32, opts.betas.1 as f32);
        let bc1 = 1.0 - b1.powi(self.step);
        let bc2 = 1.0 - b2.powi(self.step);
        let lr = opts.learning_rate as f32;
        let eps = opts.eps as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

/// Trains from a fresh initialization drawn from `opts.seed`.
pub fn train(
    model: &Seq2Seq,
    corpus: &[EncodedPair],
    valid: &[EncodedPair],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("training corpus".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be > 0".into()));
    }
    if !(opts.init_scale > 0.0) {
        return Err(Error::InvalidConfig("init_scale must be > 0".into()));
    }
    if let Some(&bad) = opts.checkpoint_epochs.iter().find(|&&e| e == 0 || e > opts.epochs) {
        return Err(Error::InvalidConfig(format!("checkpoint epoch {bad} outside 1..={}", opts.epochs)));
    }
    let mut params: ParameterSet<f32> = model.init_params(opts.seed, opts.init_scale);
    let mut history = LossHistory {
        initial_val_loss: mean_loss(model, &params, valid)?,
        epochs: Vec::with_capacity(opts.epochs as usize),
    };
    let mut snapshots = Vec::new();
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut batch_grad = vec![0.0f32; params.len()];

    for epoch in 1..=opts.epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0f64;
        for batch in order.chunks(opts.batch_size) {
            batch_grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                let (loss, grad) = model.loss_and_gradient(&params, &corpus[i], None, Reduction::Mean)?;
                train_total += loss as f64;
                for (acc, g) in batch_grad.iter_mut().zip(grad) {
                    *acc += g;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            batch_grad.iter_mut().for_each(|g| *g *= inv);
            adam.update(&mut params.values, &batch_grad, opts);
        }
        let val_loss = mean_loss(model, &params, valid)?;
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, loss: val_loss });
        }
        let train_loss = train_total / corpus.len() as f64;
        log::info!("epoch {epoch}: train {train_loss:.4} valid {val_loss:.4}");
        history.epochs.push(EpochLoss { epoch, train_loss, val_loss });
        if opts.checkpoint_epochs.contains(&epoch) {
            snapshots.push(CheckpointSnapshot { epoch, params: params.clone(), validation_loss: val_loss });
        }
    }
    Ok(TrainOutcome { snapshots, history, final_params: params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqmodel::config::ModelConfig;

    fn tiny_corpus() -> Vec<EncodedPair> {
        (0..24)
            .map(|i| {
                let a = 4 + (i % 5) as u32;
                let b = 4 + (i % 3) as u32;
                EncodedPair { src: vec![a, b], trg: vec![b, a] }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let model = Seq2Seq::new(ModelConfig::toy(10, 10)).unwrap();
        let opts = TrainOptions::toy(3, 0);
        let out = train(&model, &tiny_corpus(), &tiny_corpus(), &opts).unwrap();
        assert!(out.snapshots.is_empty());
        assert!(out.history.epochs.is_empty());
        assert_eq!(out.final_params.values, model.init_params::<f32>(3, opts.init_scale).values);
    }

    #[test]
    fn same_seed_same_history_and_snapshots() {
        let model = Seq2Seq::new(ModelConfig::toy(10, 10)).unwrap();
        let mut opts = TrainOptions::toy(11, 3);
        opts.batch_size = 5;
        opts.checkpoint_epochs = vec![1, 3];
        let a = train(&model, &tiny_corpus(), &tiny_corpus(), &opts).unwrap();
        let b = train(&model, &tiny_corpus(), &tiny_corpus(), &opts).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.snapshots.len(), 2);
        assert_eq!(a.snapshots[1].epoch, 3);
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert_eq!(x.params.values, y.params.values);
        }
        let last = a.history.epochs.last().unwrap().val_loss;
        assert!(last < a.history.initial_val_loss);
    }

    #[test]
    fn invalid_requests_fail() {
        let model = Seq2Seq::new(ModelConfig::toy(10, 10)).unwrap();
        let opts = TrainOptions::toy(1, 2);
        assert!(matches!(train(&model, &[], &[], &opts), Err(Error::EmptyInput(_))));
        let mut bad = opts.clone();
        bad.checkpoint_epochs = vec![3];
        assert!(matches!(train(&model, &tiny_corpus(), &[], &bad), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn exploding_updates_report_divergence() {
        let model = Seq2Seq::new(ModelConfig::toy(10, 10)).unwrap();
        let mut opts = TrainOptions::toy(1, 2);
        opts.learning_rate = 1e38;
        let r = train(&model, &tiny_corpus(), &tiny_corpus(), &opts);
        assert!(matches!(r, Err(Error::TrainingDiverged { epoch: 1, .. })), "{r:?}");
    }
}
