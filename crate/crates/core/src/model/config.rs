use serde::{Deserialize, Serialize};

use crate::data::Limits;
use crate::error::{Error, Result};

/// Architecture hyperparameters. Everything needed to rebuild the
/// parameter layout lives here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden size `d`.
    pub hidden: usize,
    /// Options per question `K`.
    pub options: usize,
    pub vocab_size: usize,
    pub limits: Limits,
    /// Half-width of the uniform initialization range.
    pub init_scale: f64,
    /// Divide the range of dense weight matrices by `√fan_in`.
    #[serde(default)]
    pub fan_in_init: bool,
    /// Bypass option comparison and gating; the option features feed
    /// rereading directly.
    pub ablate_comparison: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(hidden: usize, options: usize, vocab_size: usize, limits: Limits) -> Self {
        Self {
            hidden,
            options,
            vocab_size,
            limits,
            init_scale: 0.02,
            fan_in_init: false,
            ablate_comparison: false,
            seed: 0,
        }
    }

    pub fn max_len(&self) -> usize {
        self.limits.max_packed_len()
    }

    /// Initialization half-width for a weight matrix with `cols` inputs.
    pub fn weight_scale(&self, cols: usize) -> f64 {
        if self.fan_in_init {
            self.init_scale / (cols as f64).sqrt()
        } else {
            self.init_scale
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("model.hidden", "must be positive"));
        }
        if self.options < 2 {
            return Err(Error::config("model.options", "must be at least 2"));
        }
        if self.vocab_size < 4 {
            return Err(Error::config(
                "model.vocab_size",
                "must exceed the reserved ids",
            ));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::config(
                "model.init_scale",
                "must be positive and finite",
            ));
        }
        self.limits.validate()
    }
}
