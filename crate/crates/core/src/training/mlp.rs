// SPDX-License-Identifier: Apache-2.0

//! Digital fully connected score network (the offline-training twin of the
//! analog network).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::embedding::{self, ConditionEmbedding, TimeEmbedding};
use crate::error::{Error, Result};
use crate::rng::{from_seed, normal};
use crate::sde::{EvalCtx, ScoreFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// out x in
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    pub fn he_init(inputs: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = from_seed(seed);
        let std = (2.0 / inputs as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((outputs, inputs), |_| std * normal(&mut rng)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Layer-input clamp in software units. Mirrors the voltage caps that protect
/// the crossbars, so digital and analog forward passes agree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputRange {
    pub lo: f64,
    pub hi: f64,
}

impl Default for InputRange {
    fn default() -> Self {
        Self { lo: -2.0, hi: 4.0 }
    }
}

impl InputRange {
    pub fn apply(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    pub fn passes_gradient(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }
}

/// ReLU MLP with clamped layer inputs. Hidden layers receive the embedding
/// vector as an additive bias; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigitalMLP {
    pub layers: Vec<DenseLayer>,
    pub input_range: InputRange,
}

/// Forward intermediates kept for backpropagation.
pub struct MlpCache {
    /// Raw (pre-clamp) input of each layer, batch x width.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl DigitalMLP {
    /// `widths` = [in, hidden..., out].
    pub fn new(widths: &[usize], input_range: InputRange, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("network needs at least an input and output width".into()));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| DenseLayer::he_init(w[0], w[1], crate::rng::derive_seed(seed, l as u64)))
            .collect();
        Ok(Self { layers, input_range })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::outputs)
    }

    /// Width of the embedding bias port (width of the hidden layers).
    pub fn hidden_dim(&self) -> usize {
        self.layers[0].outputs()
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Dimension {
                    context: "layer chain",
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        for l in &self.layers {
            if l.b.len() != l.outputs() {
                return Err(Error::Dimension {
                    context: "bias length",
                    expected: l.outputs(),
                    got: l.b.len(),
                });
            }
        }
        let hidden = &self.layers[..self.layers.len() - 1];
        if hidden.iter().any(|l| l.outputs() != self.hidden_dim()) {
            return Err(Error::Config("all hidden layers must share the embedding width".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], embed: Option<&[f64]>) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "mlp input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h: Vec<f64> = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let a: Vec<f64> = h.iter().map(|&v| self.input_range.apply(v)).collect();
            let mut z: Vec<f64> = layer
                .w
                .rows()
                .into_iter()
                .zip(&layer.b)
                .map(|(row, b)| row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            if l < last {
                if let Some(e) = embed {
                    for (zi, ei) in z.iter_mut().zip(e) {
                        *zi += ei;
                    }
                }
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        Ok(h)
    }

    /// Batched forward pass; rows of `x` are samples, rows of `embed` their
    /// embedding vectors.
    pub fn forward_batch(&self, x: &Array2<f64>, embed: Option<&Array2<f64>>) -> (Array2<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let a = h.mapv(|v| self.input_range.apply(v));
            let mut z = a.dot(&layer.w.t()) + &layer.b;
            inputs.push(h);
            if l < last {
                if let Some(e) = embed {
                    z += e;
                }
                let out = z.mapv(|v| v.max(0.0));
                pre.push(z);
                h = out;
            } else {
                h = z;
            }
        }
        (h, MlpCache { inputs, pre })
    }

    /// Gradients w.r.t. all parameters (flattened in [`DigitalMLP::params`]
    /// order) given dLoss/dOutput.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for l in (0..=last).rev() {
            if l < last {
                g.zip_mut_with(&cache.pre[l], |gi, &z| {
                    if z <= 0.0 {
                        *gi = 0.0
                    }
                });
            }
            let raw = &cache.inputs[l];
            let a = raw.mapv(|v| self.input_range.apply(v));
            let gw = g.t().dot(&a);
            let gb = g.sum_axis(Axis(0));
            if l > 0 {
                let mut ga = g.dot(&self.layers[l].w);
                ga.zip_mut_with(raw, |gi, &v| {
                    if !self.input_range.passes_gradient(v) {
                        *gi = 0.0
                    }
                });
                g = ga;
            }
            grads.push((gw, gb));
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads {
            flat.extend(gw.iter());
            flat.extend(gb.iter());
        }
        flat
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend(l.w.iter());
            p.extend(l.b.iter());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let mut it = p.iter();
        for l in &mut self.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|v| *v = *it.next().unwrap());
        }
    }
}

/// Digital score network: MLP plus the fixed embeddings that drive its
/// hidden-layer bias ports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreNet {
    pub mlp: DigitalMLP,
    pub time: TimeEmbedding,
    pub cond: Option<ConditionEmbedding>,
}

impl ScoreNet {
    /// 2 -> 14 -> 14 -> 2 network with a 14-wide time embedding and, for
    /// conditional nets, a `classes`-way condition embedding.
    pub fn new(dim: usize, hidden: usize, classes: Option<usize>, seeds: &EmbeddingSeeds, init_seed: u64) -> Result<Self> {
        let mlp = DigitalMLP::new(&[dim, hidden, hidden, dim], InputRange::default(), init_seed)?;
        let time = TimeEmbedding::new(hidden, seeds.time)?;
        let cond = classes.map(|k| ConditionEmbedding::new(k, hidden, seeds.condition)).transpose()?;
        Ok(Self { mlp, time, cond })
    }

    pub fn embedding(&self, t: f64, label: Option<usize>) -> Result<Vec<f64>> {
        embedding::combined(&self.time, self.cond.as_ref(), t, label)
    }

    pub fn classes(&self) -> Option<usize> {
        self.cond.as_ref().map(ConditionEmbedding::classes)
    }
}

impl ScoreFn for ScoreNet {
    fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn eval(&self, x: &[f64], t: f64, label: Option<usize>, _ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        let e = self.embedding(t, label)?;
        self.mlp.forward(x, Some(&e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSeeds {
    pub time: u64,
    pub condition: u64,
}

impl Default for EmbeddingSeeds {
    fn default() -> Self {
        Self {
            time: 20240,
            condition: 20241,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn batch_and_single_forward_agree() {
        let net = DigitalMLP::new(&[2, 14, 14, 2], InputRange::default(), 5).unwrap();
        let x = array![[0.3, -1.2], [2.5, 5.0], [-3.0, 0.1]];
        let e = Array2::from_shape_fn((3, 14), |(i, j)| ((i * 14 + j) as f64).sin());
        let (out, _) = net.forward_batch(&x, Some(&e));
        for i in 0..3 {
            let single = net
                .forward(x.row(i).as_slice().unwrap(), Some(e.row(i).as_slice().unwrap()))
                .unwrap();
            for d in 0..2 {
                assert!((single[d] - out[[i, d]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let mut net = DigitalMLP::new(&[2, 14, 14, 2], InputRange::default(), 1).unwrap();
        let p = net.params();
        assert_eq!(p.len(), 2 * 14 + 14 + 14 * 14 + 14 + 14 * 2 + 2);
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_params(&shifted);
        assert_eq!(net.params(), shifted);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = DigitalMLP::new(&[2, 14, 14, 2], InputRange::default(), 1).unwrap();
        net.set_params(&vec![0.0; net.param_count()]);
        assert_eq!(net.forward(&[0.4, -0.7], Some(&[0.0; 14])).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn wrong_input_width_rejected() {
        let net = DigitalMLP::new(&[2, 14, 14, 2], InputRange::default(), 1).unwrap();
        assert!(net.forward(&[1.0], None).is_err());
        assert!(net.validate().is_ok());
    }
}
