// SPDX-License-Identifier: Apache-2.0

//! Fixed random embeddings injected as bias currents into the hidden layers.

use std::f64::consts::TAU;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{from_seed, normal};

/// Sinusoidal time embedding `[sin(2 pi W t), cos(2 pi W t)]` with fixed
/// frequencies `W ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Config(format!("time embedding dim must be even and positive, got {dim}")));
        }
        let mut rng = from_seed(seed);
        Ok(Self {
            freqs: (0..dim / 2).map(|_| normal(&mut rng)).collect(),
        })
    }

    pub fn from_freqs(freqs: Vec<f64>) -> Self {
        Self { freqs }
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend(self.freqs.iter().map(|w| (TAU * w * t).sin()));
        out.extend(self.freqs.iter().map(|w| (TAU * w * t).cos()));
        out
    }

    /// Lipschitz constant of `embed` in t (per component).
    pub fn lipschitz(&self) -> f64 {
        TAU * self.freqs.iter().fold(0.0f64, |m, w| m.max(w.abs()))
    }
}

/// Std of the projection entries. Unit scale puts the condition current in
/// the same range as the time embedding; with `1/sqrt(d)` the conditional
/// net barely separates classes.
pub const PROJECTION_STD: f64 = 1.0;

/// One-hot class label times a fixed random projection `P` (K x d).
/// The null label (unconditional) embeds to zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEmbedding {
    classes: usize,
    dim: usize,
    /// Row-major K x d.
    proj: Vec<f64>,
}

impl ConditionEmbedding {
    /// Entries drawn from `N(0, PROJECTION_STD^2)`.
    pub fn new(classes: usize, dim: usize, seed: u64) -> Result<Self> {
        if classes == 0 || dim == 0 {
            return Err(Error::Config("condition embedding needs classes > 0 and dim > 0".into()));
        }
        let dist = Normal::new(0.0, PROJECTION_STD).expect("positive std");
        let mut rng = from_seed(seed);
        Ok(Self {
            classes,
            dim,
            proj: (0..classes * dim).map(|_| dist.sample(&mut rng)).collect(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, label: Option<usize>) -> Result<Vec<f64>> {
        match label {
            None => Ok(vec![0.0; self.dim]),
            Some(l) if l < self.classes => Ok(self.proj[l * self.dim..(l + 1) * self.dim].to_vec()),
            Some(l) => Err(Error::Label {
                label: l,
                classes: self.classes,
            }),
        }
    }
}

/// Sum of the time and (optional) condition embeddings: the per-hidden-layer
/// bias vector.
pub fn combined(time: &TimeEmbedding, cond: Option<&ConditionEmbedding>, t: f64, label: Option<usize>) -> Result<Vec<f64>> {
    let mut v = time.embed(t);
    match (cond, label) {
        (Some(c), label) => {
            if c.dim() != v.len() {
                return Err(Error::Dimension {
                    context: "embedding sum",
                    expected: v.len(),
                    got: c.dim(),
                });
            }
            for (a, b) in v.iter_mut().zip(c.embed(label)?) {
                *a += b;
            }
        }
        (None, Some(l)) => return Err(Error::Label { label: l, classes: 0 }),
        (None, None) => {}
    }
    Ok(v)
}
