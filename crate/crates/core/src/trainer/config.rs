use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{Method, DEFAULT_REPULSION};

pub const MAX_EPOCHS: usize = 5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over the run.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    /// Prototype repulsion weight λ (embedding method only).
    pub repulsion: f64,
    pub seed: u64,
    /// Unordered pairs drawn per training sequence per epoch (two-tower
    /// methods); each is used in both presentation orders. `None` uses all.
    pub pairs_per_sequence: Option<usize>,
    pub min_separation: usize,
    /// Fraction of participants held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining participants used for validation.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Embedding,
            epochs: MAX_EPOCHS,
            batch_size: 16,
            adam: AdamConfig::default(),
            schedule: Schedule::Constant,
            repulsion: DEFAULT_REPULSION,
            seed: 0,
            pairs_per_sequence: Some(16),
            min_separation: 1,
            test_fraction: 0.2,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.epochs > MAX_EPOCHS {
            return fail(format!("epochs must be in 1..={MAX_EPOCHS}, got {}", self.epochs));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.eps > 0.0 && a.weight_decay >= 0.0) {
            return fail(format!(
                "lr {} / eps {} must be positive, weight decay non-negative",
                a.lr, a.eps
            ));
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return fail(format!("Adam betas ({}, {}) outside [0,1)", a.beta1, a.beta2));
        }
        if self.repulsion < 0.0 {
            return fail(format!("repulsion {} is negative", self.repulsion));
        }
        if self.min_separation == 0 {
            return fail("min_separation must be at least 1".into());
        }
        if self.pairs_per_sequence == Some(0) {
            return fail("pairs_per_sequence must be positive".into());
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.adam.lr,
            Schedule::Cosine => {
                let frac = step as f64 / total_steps.max(1) as f64;
                self.adam.lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}
