use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the encoder-decoder. Vocabulary sizes include the four specials.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub tie_trg_embedding_and_output: bool,
    pub src_vocab_size: usize,
    pub trg_vocab_size: usize,
    /// Rows of the learned position tables; later positions reuse the last row.
    #[serde(default = "default_max_positions")]
    pub max_positions: usize,
}

fn default_max_positions() -> usize {
    32
}

impl ModelConfig {
    /// Desk-scale defaults: one GRU layer on each side, 16-wide everything.
    pub fn toy(src_vocab_size: usize, trg_vocab_size: usize) -> Self {
        ModelConfig {
            embed_dim: 16,
            hidden_dim: 16,
            num_encoder_layers: 1,
            num_decoder_layers: 1,
            tie_trg_embedding_and_output: false,
            src_vocab_size,
            trg_vocab_size,
            max_positions: default_max_positions(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_encoder_layers", self.num_encoder_layers),
            ("num_decoder_layers", self.num_decoder_layers),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be > 0"));
            }
        }
        // specials occupy ids 0..4
        if self.src_vocab_size <= 4 {
            problems.push("src_vocab_size must exceed the 4 special tokens".into());
        }
        if self.trg_vocab_size <= 4 {
            problems.push("trg_vocab_size must exceed the 4 special tokens".into());
        }
        if self.tie_trg_embedding_and_output && self.embed_dim != self.hidden_dim {
            problems.push("tying requires embed_dim == hidden_dim".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}
