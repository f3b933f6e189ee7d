//! Architecture hyperparameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("d_model {d_model} must be divisible by n_heads {n_heads}")]
    HeadSplit { d_model: usize, n_heads: usize },
    #[error("n_layers must be even for the early/late split, got {0}")]
    OddLayerCount(usize),
    #[error("{0} must be positive")]
    ZeroField(&'static str),
}

/// Decoder-only transformer shape. `mlp_hidden` is fixed at 4 x d_model and
/// `d_head` at d_model / n_heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    #[serde(default = "default_mlp_hidden")]
    pub mlp_hidden: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    pub seed: u64,
}

fn default_mlp_hidden() -> usize {
    0 // resolved to 4*d_model in validate()
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    pub fn new(
        n_layers: usize,
        d_model: usize,
        n_heads: usize,
        vocab_size: usize,
        max_seq_len: usize,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        let mut cfg = Self {
            n_layers,
            d_model,
            n_heads,
            vocab_size,
            max_seq_len,
            mlp_hidden: 4 * d_model,
            layer_norm_eps: default_eps(),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fill derived fields and check invariants.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        if self.mlp_hidden == 0 {
            self.mlp_hidden = 4 * self.d_model;
        }
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(ConfigError::ZeroField(name));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ConfigError::HeadSplit {
                d_model: self.d_model,
                n_heads: self.n_heads,
            });
        }
        if self.n_layers % 2 != 0 {
            return Err(ConfigError::OddLayerCount(self.n_layers));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}
