//! From-scratch GRU encoder-decoder with additive attention.
//!
//! The encoder consumes an embedded token sequence one step at a time; the
//! decoder attends over all encoder hidden states and predicts the next
//! event token under a softmax output projection. Training minimizes mean
//! negative log-likelihood by explicit backpropagation through every weight,
//! with per-pair stochastic gradient descent, stochastic teacher forcing,
//! and global-norm gradient clipping. All arithmetic is `f64`, and every
//! routine is deterministic given its seed.

mod attention;
mod cell;
mod checkpoint;
mod gradcheck;
mod net;
mod params;

pub use attention::{attention, AttnCache};
pub use cell::{gru_cell, GruCache};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use net::{
    decode_step, encode, nll_loss, predict, resume, train, train_step, train_step_clipped,
    Encoding, Prediction, StepOutcome, TrainOutput, DEFAULT_CLIP_NORM, NLL_FLOOR,
};
pub use params::{AttentionWeights, GruWeights, ModelParams, TensorView, TensorViewMut};

use ndarray::Array1;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("empty sequence")]
    EmptySequence,
    #[error("token index {token} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("training requires a non-empty pair set")]
    EmptyPairSet,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("training diverged with non-finite loss at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub hidden_size: usize,
    pub iterations: usize,
    /// Learning rate at the first iteration.
    pub lr_start: f64,
    /// Learning rate approached at the last iteration; equal to `lr_start`
    /// for a constant rate, otherwise the rate decays exponentially.
    pub lr_end: f64,
    /// Probability of feeding ground-truth tokens to the decoder; one draw
    /// per pair.
    pub teacher_forcing: f64,
    pub max_len: usize,
    pub seed: u64,
    /// Mean loss is recorded every this many iterations.
    pub log_every: usize,
    /// Global gradient norm above which gradients are rescaled.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden_size: 256,
            iterations: 70_000,
            lr_start: 0.01,
            lr_end: 0.0001,
            teacher_forcing: 0.5,
            max_len: 100,
            seed: 0,
            log_every: 100,
            clip_norm: DEFAULT_CLIP_NORM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_size == 0 {
            return Err(ModelError::InvalidConfig("hidden size must be positive".into()));
        }
        if !(self.lr_start > 0.0) || !(self.lr_end > 0.0) {
            return Err(ModelError::InvalidConfig("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.teacher_forcing) {
            return Err(ModelError::InvalidConfig(
                "teacher forcing probability must lie in [0, 1]".into(),
            ));
        }
        if self.log_every == 0 {
            return Err(ModelError::InvalidConfig("log_every must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(ModelError::InvalidConfig("max_len must be positive".into()));
        }
        Ok(())
    }

    /// Exponential decay from `lr_start` to `lr_end` over the run.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if self.iterations <= 1 || self.lr_start == self.lr_end {
            return self.lr_start;
        }
        let t = iteration as f64 / (self.iterations - 1) as f64;
        self.lr_start * (self.lr_end / self.lr_start).powf(t)
    }
}

/// One entry of the training loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub iteration: usize,
    pub mean_nll: f64,
}

/// Numerically stable softmax.
pub(crate) fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut e = x.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e /= sum;
    e
}

/// Index of the largest entry; first index wins ties.
pub(crate) fn argmax(x: &Array1<f64>) -> usize {
    let mut best = 0;
    let mut best_value = x[0];
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

pub(crate) fn all_finite(x: &Array1<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_normalizes() {
        let p = softmax(&array![1.0, 2.0, 3.0, -1.0]);
        assert!((p.sum() - 1.0).abs() <= 1e-12);
        assert!(p.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn softmax_is_shift_invariant_and_stable() {
        let a = softmax(&array![1000.0, 1001.0]);
        let b = softmax(&array![0.0, 1.0]);
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        assert_eq!(argmax(&array![0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&array![0.1, 0.2, 0.9]), 2);
    }

    #[test]
    fn lr_schedule_decays_exponentially() {
        let config = TrainConfig {
            iterations: 3,
            lr_start: 0.01,
            lr_end: 0.0001,
            ..TrainConfig::default()
        };
        assert!((config.lr_at(0) - 0.01).abs() < 1e-15);
        assert!((config.lr_at(1) - 0.001).abs() < 1e-12);
        assert!((config.lr_at(2) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn constant_lr_when_endpoints_match() {
        let config = TrainConfig {
            iterations: 100,
            lr_start: 0.05,
            lr_end: 0.05,
            ..TrainConfig::default()
        };
        assert_eq!(config.lr_at(0), 0.05);
        assert_eq!(config.lr_at(99), 0.05);
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut config = TrainConfig::default();
        config.teacher_forcing = 1.5;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.lr_start = 0.0;
        assert!(config.validate().is_err());
    }
}
