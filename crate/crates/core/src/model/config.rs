use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub dropout: f64,
    /// Depthwise kernel width in the convolution module; odd.
    pub conv_kernel: usize,
    pub subsample_factor: usize,
    /// Gloss vocabulary size V, excluding the blank.
    pub vocab_size: usize,
    /// Probability of skipping a whole block while training.
    pub layer_drop: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 492,
            d_model: 512,
            n_blocks: 8,
            n_heads: 8,
            d_ff: 2048,
            dropout: 0.3,
            conv_kernel: 15,
            subsample_factor: 4,
            vocab_size: 1000,
            layer_drop: 0.0,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Two blocks, width 16; small enough for finite-difference checks.
    pub fn toy(input_dim: usize, vocab_size: usize) -> Self {
        Self {
            input_dim,
            d_model: 16,
            n_blocks: 2,
            n_heads: 2,
            d_ff: 32,
            dropout: 0.0,
            conv_kernel: 3,
            vocab_size,
            ..Self::default()
        }
    }

    pub fn n_classes(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Encoder frames produced from `t` input frames.
    pub fn output_len(&self, t: usize) -> usize {
        t.div_ceil(2).div_ceil(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.input_dim == 0 || self.d_model == 0 || self.d_ff == 0 || self.n_blocks == 0 {
            return bad("model dimensions must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model % 2 != 0 {
            return bad(format!(
                "positional encoding needs an even d_model, got {}",
                self.d_model
            ));
        }
        if self.conv_kernel % 2 == 0 {
            return bad(format!("conv_kernel must be odd, got {}", self.conv_kernel));
        }
        if self.subsample_factor != 4 {
            return bad(format!("subsample_factor must be 4, got {}", self.subsample_factor));
        }
        if self.vocab_size == 0 {
            return bad("vocab_size must be ≥ 1".into());
        }
        for (name, p) in [("dropout", self.dropout), ("layer_drop", self.layer_drop)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm_eps must be > 0".into());
        }
        Ok(())
    }

    /// `key value` lines, used as checkpoint metadata.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("input_dim".into(), self.input_dim.to_string()),
            ("d_model".into(), self.d_model.to_string()),
            ("n_blocks".into(), self.n_blocks.to_string()),
            ("n_heads".into(), self.n_heads.to_string()),
            ("d_ff".into(), self.d_ff.to_string()),
            ("dropout".into(), self.dropout.to_string()),
            ("conv_kernel".into(), self.conv_kernel.to_string()),
            ("subsample_factor".into(), self.subsample_factor.to_string()),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("layer_drop".into(), self.layer_drop.to_string()),
            ("norm_eps".into(), self.norm_eps.to_string()),
        ]
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = 0;
        for (k, v) in pairs {
            let int = || {
                v.parse::<usize>()
                    .map_err(|_| Error::config(format!("model.{k}: bad integer {v:?}")))
            };
            let real = || {
                v.parse::<f64>()
                    .map_err(|_| Error::config(format!("model.{k}: bad number {v:?}")))
            };
            match k {
                "input_dim" => cfg.input_dim = int()?,
                "d_model" => cfg.d_model = int()?,
                "n_blocks" => cfg.n_blocks = int()?,
                "n_heads" => cfg.n_heads = int()?,
                "d_ff" => cfg.d_ff = int()?,
                "dropout" => cfg.dropout = real()?,
                "conv_kernel" => cfg.conv_kernel = int()?,
                "subsample_factor" => cfg.subsample_factor = int()?,
                "vocab_size" => cfg.vocab_size = int()?,
                "layer_drop" => cfg.layer_drop = real()?,
                "norm_eps" => cfg.norm_eps = real()?,
                _ => continue,
            }
            seen += 1;
        }
        if seen != 11 {
            return Err(Error::config("model config is incomplete"));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
