use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::GroundingParams;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    AdamW,
    /// Plain gradient descent, useful for isolating gradient checks.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Fraction of steps with linear warmup before cosine decay.
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.997,
            epsilon: 1e-8,
            weight_decay: 0.0,
            warmup_ratio: 0.03,
            epochs: 1,
            batch_size: 2,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return Err(Error::invalid(format!(
                "warmup ratio must be in [0, 1), got {}",
                self.warmup_ratio
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must be in [0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        Ok(())
    }

    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        (self.warmup_ratio * total_steps as f64).ceil() as usize
    }

    /// Linear warmup to the peak rate, then cosine decay to zero at `total_steps`.
    pub fn learning_rate_at(&self, step: usize, total_steps: usize) -> f64 {
        let warmup = self.warmup_steps(total_steps);
        if step < warmup {
            return self.learning_rate * (step + 1) as f64 / warmup as f64;
        }
        let decay_steps = (total_steps - warmup).max(1) as f64;
        let progress = ((step - warmup) as f64 / decay_steps).min(1.0);
        0.5 * self.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Optimizer state for one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    total_steps: usize,
    step: usize,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Optimizer {
    pub fn new(
        config: OptimizerConfig,
        params: &GroundingParams,
        total_steps: usize,
    ) -> Result<Self> {
        config.validate()?;
        let n = params.num_parameters();
        Ok(Self {
            config,
            total_steps,
            step: 0,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        })
    }

    pub fn current_learning_rate(&self) -> f64 {
        self.config.learning_rate_at(self.step, self.total_steps)
    }

    pub fn step(&mut self, params: &mut GroundingParams, grad: &GroundingParams) {
        let lr = self.current_learning_rate();
        let c = &self.config;
        self.step += 1;
        let bias1 = 1.0 - c.beta1.powi(self.step as i32);
        let bias2 = 1.0 - c.beta2.powi(self.step as i32);

        let grads = grad.to_flat();
        let mut offset = 0;
        for tensor in params.tensors_mut() {
            for value in tensor.iter_mut() {
                let g = grads[offset];
                match c.kind {
                    OptimizerKind::Sgd => *value -= lr * g,
                    OptimizerKind::AdamW => {
                        let m = &mut self.first_moment[offset];
                        let v = &mut self.second_moment[offset];
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let update = (*m / bias1) / ((*v / bias2).sqrt() + c.epsilon);
                        *value -= lr * (update + c.weight_decay * *value);
                    }
                }
                offset += 1;
            }
        }
    }
}
