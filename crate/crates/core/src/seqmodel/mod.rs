//! Tiny encoder-decoder translation model with explicit reverse-mode
//! differentiation, training, decoding, checkpoint files and per-example
//! gradient extraction.

pub mod checkpoint;
pub mod config;
pub mod decode;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod train;
pub mod vocab;

pub use checkpoint::CheckpointSnapshot;
pub use config::ModelConfig;
pub use decode::decode;
pub use gradcheck::finite_difference_check;
pub use model::{EncodedPair, Reduction, Seq2Seq};
pub use params::{Component, ComponentSpan, GradientOrigin, GradientVector, Layout, ParameterSet};
pub use train::{train, LossHistory, TrainOptions, TrainOutcome};
pub use vocab::Vocabulary;
