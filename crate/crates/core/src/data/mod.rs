// SPDX-License-Identifier: Apache-2.0

//! Datasets: the synthetic ring, EMNIST letters and procedurally drawn
//! glyphs used when EMNIST is not available.

pub mod emnist;
pub mod glyphs;
pub mod idx;

use std::f64::consts::TAU;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::IMAGE_LEN;
use crate::rng::{normal, SimRng};

pub use emnist::{load_emnist, preprocess, EmnistSplit, RawImages};
pub use glyphs::synthetic_glyphs;

/// Class names of the letter task, in label order.
pub const LETTERS: [char; 3] = ['H', 'K', 'U'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingSpec {
    pub radius: f64,
    pub radial_sigma: f64,
    pub n: usize,
}

impl Default for RingSpec {
    fn default() -> Self {
        Self {
            radius: 1.0,
            radial_sigma: 0.05,
            n: 10_000,
        }
    }
}

impl RingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !(self.radial_sigma >= 0.0) {
            return Err(Error::Config("ring: need radius > 0 and radial_sigma >= 0".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("ring: n must be >= 1".into()));
        }
        Ok(())
    }
}

/// `n` points with uniform angle and radius `N(radius, radial_sigma^2)`.
pub fn ring_sampler(spec: &RingSpec, rng: &mut SimRng) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut out = Array2::zeros((spec.n, 2));
    for mut row in out.rows_mut() {
        let theta = rng.random::<f64>() * TAU;
        let r = spec.radius + spec.radial_sigma * normal(rng);
        row[0] = r * theta.cos();
        row[1] = r * theta.sin();
    }
    Ok(out)
}

/// Rows of an `n x d` matrix as vectors.
pub fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// 12x12 letter images in [-1, 1] with labels H=0, K=1, U=2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDataset {
    pub images: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl ImageDataset {
    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() {
            return Err(Error::Dimension {
                context: "dataset labels",
                expected: self.images.len(),
                got: self.labels.len(),
            });
        }
        for img in &self.images {
            if img.len() != IMAGE_LEN {
                return Err(Error::Dimension {
                    context: "dataset image",
                    expected: IMAGE_LEN,
                    got: img.len(),
                });
            }
            if img.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::format("dataset image", "pixel outside [-1, 1]"));
            }
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= LETTERS.len()) {
            return Err(Error::Label {
                label: l,
                classes: LETTERS.len(),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Per-class mean image; `None` for classes without samples.
    pub fn class_means(&self, classes: usize) -> Vec<Option<Vec<f64>>> {
        let mut sums = vec![vec![0.0; IMAGE_LEN]; classes];
        let mut counts = vec![0usize; classes];
        for (img, &l) in self.images.iter().zip(&self.labels) {
            if l < classes {
                counts[l] += 1;
                sums[l].iter_mut().zip(img).for_each(|(s, v)| *s += v);
            }
        }
        sums.into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
            .collect()
    }

    /// Keeps at most `per_class` images of each class, in order.
    pub fn truncate_per_class(&self, per_class: usize) -> Self {
        let mut counts = vec![0usize; LETTERS.len()];
        let mut out = Self {
            images: Vec::new(),
            labels: Vec::new(),
        };
        for (img, &l) in self.images.iter().zip(&self.labels) {
            if counts[l] < per_class {
                counts[l] += 1;
                out.images.push(img.clone());
                out.labels.push(l);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;

    #[test]
    fn zero_sigma_ring_is_exact() {
        let spec = RingSpec {
            radial_sigma: 0.0,
            n: 500,
            ..RingSpec::default()
        };
        let pts = ring_sampler(&spec, &mut from_seed(1)).unwrap();
        for r in pts.rows() {
            assert!((r[0].hypot(r[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ring_moments() {
        let spec = RingSpec {
            n: 100_000,
            ..RingSpec::default()
        };
        let pts = ring_sampler(&spec, &mut from_seed(2)).unwrap();
        let n = spec.n as f64;
        let mean_x = pts.column(0).sum() / n;
        let mean_y = pts.column(1).sum() / n;
        // coordinate std is about radius / sqrt(2)
        let tol = 4.0 * 0.71 / n.sqrt();
        assert!(mean_x.abs() < tol && mean_y.abs() < tol);
        let mean_r = pts.rows().into_iter().map(|r| r[0].hypot(r[1])).sum::<f64>() / n;
        assert!((mean_r - 1.0).abs() < 4.0 * 0.05 / n.sqrt() + 1e-3);
    }

    #[test]
    fn ring_rejects_bad_spec() {
        let mut rng = from_seed(0);
        assert!(ring_sampler(&RingSpec { n: 0, ..RingSpec::default() }, &mut rng).is_err());
        assert!(ring_sampler(&RingSpec { radius: 0.0, ..RingSpec::default() }, &mut rng).is_err());
        assert!(ring_sampler(&RingSpec { radial_sigma: -1.0, ..RingSpec::default() }, &mut rng).is_err());
    }

    #[test]
    fn class_means_skip_missing_classes() {
        let ds = ImageDataset {
            images: vec![vec![1.0; IMAGE_LEN], vec![0.0; IMAGE_LEN]],
            labels: vec![0, 0],
        };
        let means = ds.class_means(3);
        assert_eq!(means[0].as_ref().unwrap()[0], 0.5);
        assert!(means[1].is_none() && means[2].is_none());
    }
}
