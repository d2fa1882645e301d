// SPDX-License-Identifier: Apache-2.0

//! Offline digital training: denoising score matching for the score network
//! and the class-centred VAE objective.

pub mod dsm;
pub mod mlp;
pub mod vae;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Probability of replacing a label with the null token.
    pub p_uncond: f64,
    pub seed: u64,
    pub t_min: f64,
    /// Rescale the gradient to this norm when it is exceeded.
    pub clip_grad_norm: Option<f64>,
    /// Cosine decay of the learning rate to this fraction of its initial
    /// value over the run; 1 keeps it constant.
    pub lr_final_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 256,
            steps: 20_000,
            p_uncond: 0.1,
            seed: 1,
            t_min: 1e-3,
            clip_grad_norm: Some(10.0),
            lr_final_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("training: need learning_rate > 0 and 0 <= momentum < 1".into()));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("training: batch_size and steps must be >= 1".into()));
        }
        if !(self.lr_final_fraction > 0.0 && self.lr_final_fraction <= 1.0) {
            return Err(Error::Config("training: need 0 < lr_final_fraction <= 1".into()));
        }
        if !(0.0..1.0).contains(&self.p_uncond) {
            return Err(Error::Config("training: need 0 <= p_uncond < 1".into()));
        }
        Ok(())
    }
}

/// Stochastic gradient descent with heavy-ball momentum over a flat
/// parameter vector.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    final_fraction: f64,
    total: usize,
    t: usize,
    momentum: f64,
    clip: Option<f64>,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(config: &TrainConfig, params: usize) -> Self {
        Self {
            lr: config.learning_rate,
            final_fraction: config.lr_final_fraction,
            total: config.steps,
            t: 0,
            momentum: config.momentum,
            clip: config.clip_grad_norm,
            velocity: vec![0.0; params],
        }
    }

    /// Learning rate of the next step.
    pub fn current_lr(&self) -> f64 {
        let progress = (self.t as f64 / self.total.max(1) as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.final_fraction + (1.0 - self.final_fraction) * cos)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        let lr = self.current_lr();
        self.t += 1;
        let mut k = 1.0;
        if let Some(max) = self.clip {
            let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                k = max / norm;
            }
        }
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            *v = self.momentum * *v - lr * k * g;
            *p += *v;
        }
    }
}

/// Moving average with window `w` (shorter at the start).
pub fn smooth(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
