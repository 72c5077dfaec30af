use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::RmsPropConfig;
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub lr: f64,
    pub beta_entropy: f64,
    pub beta_d1: f64,
    pub beta_d2: f64,
    pub beta_l: f64,
    pub beta_r: f64,
    pub gamma: f64,
    pub chunk_len: usize,
    pub reward_clip: bool,
    pub reward_scale: f64,
    pub n_workers: usize,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub rmsprop: RmsPropConfig,
    /// Capacity of the reward-prediction replay buffer.
    pub replay_capacity: usize,
    /// Replayed frames per update for the reward head.
    pub replay_batch: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta_entropy: 5e-4,
            beta_d1: 10.0,
            beta_d2: 3.33,
            beta_l: 3.33,
            beta_r: 1.0,
            gamma: 0.99,
            chunk_len: 50,
            reward_clip: false,
            reward_scale: 1.0,
            n_workers: 16,
            value_coef: 0.5,
            grad_clip: 40.0,
            rmsprop: RmsPropConfig::default(),
            replay_capacity: 2000,
            replay_batch: 32,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return config_err(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return config_err(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if self.chunk_len == 0 {
            return config_err("chunk_len must be positive");
        }
        if self.n_workers == 0 {
            return config_err("n_workers must be positive");
        }
        if !(self.rmsprop.decay > 0.0 && self.rmsprop.decay < 1.0 && self.rmsprop.epsilon > 0.0) {
            return config_err("rmsprop needs 0 < decay < 1 and epsilon > 0");
        }
        if self.replay_capacity == 0 {
            return config_err("replay_capacity must be positive");
        }
        Ok(())
    }
}

/// Scales and optionally clips a raw reward.
pub fn transform_reward(r: f32, hp: &HyperParams) -> f32 {
    let r = r * hp.reward_scale as f32;
    if hp.reward_clip {
        r.clamp(-1.0, 1.0)
    } else {
        r
    }
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..=hi.ln()).exp().clamp(lo, hi)
}

pub const BETA_D1_CHOICES: [f64; 3] = [3.33, 10.0, 33.0];
pub const BETA_D2_CHOICES: [f64; 3] = [1.0, 3.33, 10.0];
pub const BETA_L_CHOICES: [f64; 3] = [1.0, 3.33, 10.0];
pub const CHUNK_LEN_CHOICES: [usize; 2] = [50, 75];

/// Random draw for a hyperparameter sweep; fields not sampled come from `base`.
pub fn sample_hyperparams<R: Rng>(rng: &mut R, base: &HyperParams) -> HyperParams {
    HyperParams {
        lr: log_uniform(rng, 1e-4, 5e-4),
        beta_entropy: log_uniform(rng, 1e-4, 1e-3),
        beta_d1: *BETA_D1_CHOICES.choose(rng).expect("non-empty"),
        beta_d2: *BETA_D2_CHOICES.choose(rng).expect("non-empty"),
        beta_l: *BETA_L_CHOICES.choose(rng).expect("non-empty"),
        chunk_len: *CHUNK_LEN_CHOICES.choose(rng).expect("non-empty"),
        ..base.clone()
    }
}
