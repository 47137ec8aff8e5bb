//! Training objectives, the optimizer and the generic training step.

pub mod lm;
pub mod optim;
pub mod runmt;
pub mod supervised;
pub mod train;
pub mod unmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lm::{clm_loss, mask_tokens, mlm_loss, plm_mlm_loss, tlm_loss, Masked};
pub use optim::{Adam, AdamConfig};
pub use runmt::{Objective, RunmtConfig, RunmtData, RunmtTrainer};
pub use supervised::{finetune, joint_loss, FinetuneConfig};
pub use train::{gradients, pick, train_step, MetricRow, Sampler, TrainState};
pub use unmt::{
    add_noise, agreed_translations, bt_batch, dae_batch, generate, pseudo_loss, rabt_batches, rat_batches, xbt_batches,
    xbt_generate, LanguageTriple, NoiseConfig, PseudoBatch,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Label smoothing of the smoothed cross-entropy.
    pub smoothing: f64,
    pub mask_prob: f64,
    pub noise: NoiseConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { smoothing: 0.1, mask_prob: 0.15, noise: NoiseConfig::default() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config(format!("smoothing {} outside [0, 1)", self.smoothing)));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Config(format!("mask probability {} outside (0, 1)", self.mask_prob)));
        }
        if !(0.0..1.0).contains(&self.noise.word_drop) {
            return Err(Error::Config(format!("word drop {} outside [0, 1)", self.noise.word_drop)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
