//! Instance-specific data filtering for sequence-to-sequence translation
//! with checkpoint-averaged gradient similarity (TracIn).
//!
//! The crate trains a tiny attention encoder-decoder on a synthetic
//! parallel corpus with injected noise, extracts per-example gradients
//! sliced by network component, ranks training examples against probing
//! gradients (vanilla, masked and gradient-difference), and evaluates how
//! well the injected noisy examples are retrieved.
//!
//! Modules:
//! - [`seqmodel`]: model, reverse-mode tape, training, decoding, checkpoints.
//! - [`corpus`]: toy grammar, noise injection, probing subsets and probes.
//! - [`influence`]: similarity engine, probe gradients, rankings, gradient cache.
//! - [`eval`]: retrieval metrics, thresholding analyses, sensitivity harness.
//! - [`cli`]: experiment config and the `gen/train/influence/report` stages.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod influence;
pub mod seqmodel;

pub use error::{Error, Result};
