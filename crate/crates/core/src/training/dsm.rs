// SPDX-License-Identifier: Apache-2.0

//! Denoising score matching with sigma weighting:
//! `L = mean || sigma(t) s(x_t, t, c) + eps ||^2`, `x_t = m(t) x_0 + sigma(t) eps`,
//! `t ~ U(t_min, T)`. Labels are dropped to the null token with probability
//! `p_uncond`, so one conditional network also provides the unconditional
//! score needed for guidance.

use ndarray::Array2;
use rand::Rng;

use super::mlp::{EmbeddingSeeds, ScoreNet};
use super::{Sgd, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, from_seed, normal, SimRng};
use crate::sde::VPSchedule;

/// One fixed draw of everything random in the loss, so the loss is a
/// deterministic function of the parameters (used for gradient checks).
#[derive(Debug, Clone)]
pub struct DsmBatch {
    pub x_t: Array2<f64>,
    pub eps: Array2<f64>,
    pub sigma: Vec<f64>,
    pub embed: Array2<f64>,
}

/// Draws a batch of noised samples. `x0` rows are data points.
pub fn draw_batch(
    net: &ScoreNet,
    x0: &Array2<f64>,
    labels: Option<&[usize]>,
    sched: &VPSchedule,
    p_uncond: f64,
    t_min: f64,
    rng: &mut SimRng,
) -> Result<DsmBatch> {
    let (b, n) = x0.dim();
    if b == 0 {
        return Err(Error::Empty("dsm batch"));
    }
    let hidden = net.mlp.hidden_dim();
    let mut x_t = Array2::zeros((b, n));
    let mut eps = Array2::zeros((b, n));
    let mut sigma = Vec::with_capacity(b);
    let mut embed = Array2::zeros((b, hidden));
    for i in 0..b {
        let t = rng.random_range(t_min..=sched.t_end);
        let m = sched.marginal(t);
        for d in 0..n {
            let e = normal(rng);
            eps[[i, d]] = e;
            x_t[[i, d]] = m.mean_coef * x0[[i, d]] + m.sigma * e;
        }
        sigma.push(m.sigma);
        let label = match labels {
            Some(ls) => {
                let drop = rng.random::<f64>() < p_uncond;
                (!drop).then_some(ls[i])
            }
            None => None,
        };
        let e = net.embedding(t, label)?;
        embed.row_mut(i).iter_mut().zip(e).for_each(|(dst, v)| *dst = v);
    }
    Ok(DsmBatch { x_t, eps, sigma, embed })
}

/// Loss and exact parameter gradient on a fixed batch.
pub fn loss_on(net: &ScoreNet, batch: &DsmBatch) -> (f64, Vec<f64>) {
    let (out, cache) = net.mlp.forward_batch(&batch.x_t, Some(&batch.embed));
    let b = out.nrows() as f64;
    let mut loss = 0.0;
    let mut grad_out = Array2::zeros(out.dim());
    for ((i, d), &o) in out.indexed_iter() {
        let s = batch.sigma[i];
        let r = s * o + batch.eps[[i, d]];
        loss += r * r;
        grad_out[[i, d]] = 2.0 * s * r / b;
    }
    (loss / b, net.mlp.backward(&cache, &grad_out))
}

/// Samples a batch and returns loss and gradient.
pub fn dsm_loss(
    net: &ScoreNet,
    x0: &Array2<f64>,
    labels: Option<&[usize]>,
    sched: &VPSchedule,
    p_uncond: f64,
    t_min: f64,
    rng: &mut SimRng,
) -> Result<(f64, Vec<f64>)> {
    let batch = draw_batch(net, x0, labels, sched, p_uncond, t_min, rng)?;
    Ok(loss_on(net, &batch))
}

/// Output of [`train_score`].
#[derive(Debug, Clone)]
pub struct TrainedScore {
    pub net: ScoreNet,
    pub losses: Vec<f64>,
}

/// Trains a 2 -> 14 -> 14 -> 2 score network on `data` (rows are points in
/// software units). Passing `labels` trains a conditional network with
/// classifier-free label dropout.
pub fn train_score(
    data: &Array2<f64>,
    labels: Option<(&[usize], usize)>,
    sched: &VPSchedule,
    config: &TrainConfig,
    seeds: &EmbeddingSeeds,
) -> Result<TrainedScore> {
    config.validate()?;
    let (n, dim) = data.dim();
    if n == 0 {
        return Err(Error::Empty("training data"));
    }
    if let Some((ls, _)) = labels {
        if ls.len() != n {
            return Err(Error::Dimension {
                context: "training labels",
                expected: n,
                got: ls.len(),
            });
        }
    }
    let mut net = ScoreNet::new(dim, 14, labels.map(|(_, k)| k), seeds, derive_seed(config.seed, 0))?;
    let mut rng = from_seed(derive_seed(config.seed, 1));
    let mut opt = Sgd::new(config, net.mlp.param_count());
    let mut params = net.mlp.params();
    let mut losses = Vec::with_capacity(config.steps);
    let mut x0 = Array2::zeros((config.batch_size, dim));
    let mut batch_labels = vec![0usize; config.batch_size];
    for step in 0..config.steps {
        for i in 0..config.batch_size {
            let j = rng.random_range(0..n);
            x0.row_mut(i).assign(&data.row(j));
            if let Some((ls, _)) = labels {
                batch_labels[i] = ls[j];
            }
        }
        let (loss, grad) = dsm_loss(
            &net,
            &x0,
            labels.map(|_| batch_labels.as_slice()),
            sched,
            config.p_uncond,
            config.t_min,
            &mut rng,
        )?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        losses.push(loss);
        opt.step(&mut params, &grad);
        net.mlp.set_params(&params);
    }
    Ok(TrainedScore { net, losses })
}
