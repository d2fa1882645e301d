// SPDX-License-Identifier: Apache-2.0

//! Class-centred VAE objective:
//! `MSE(x, decode(z)) + gamma * KL(N(mu, sigma^2) || N(center_label, I))`
//! with `z = mu + sigma * eps`.

use rand::Rng;
use rayon::prelude::*;

use super::{Sgd, TrainConfig};
use crate::error::{Error, Result};
use crate::latent::{LatentSpec, Vae, VaeDecoder, VaeEncoder, IMAGE_LEN, LATENT_DIM};
use crate::rng::{derive_seed, from_seed, normal_vec};

/// Closed-form KL of `N(mu, exp(log_var))` to `N(center, 1)`, summed over
/// dimensions.
pub fn latent_kl(mu: &[f64], log_var: &[f64], center: &[f64]) -> f64 {
    mu.iter()
        .zip(log_var)
        .zip(center)
        .map(|((m, l), c)| 0.5 * (l.exp() + (m - c).powi(2) - 1.0 - l))
        .sum()
}

/// Loss and gradients of one sample.
struct SampleGrad {
    loss: f64,
    enc: Vec<f64>,
    dec: Vec<f64>,
}

fn sample_grad(vae: &Vae, image: &[f64], center: &[f64], eps: &[f64], gamma: f64) -> Result<SampleGrad> {
    let (post, enc_cache) = vae.encoder.forward(image)?;
    let sigma = post.sigma();
    let z: Vec<f64> = (0..LATENT_DIM).map(|d| post.mu[d] + sigma[d] * eps[d]).collect();
    let (recon, dec_cache) = vae.decoder.forward(&z)?;
    let n = IMAGE_LEN as f64;
    let mse = recon.iter().zip(image).map(|(r, x)| (r - x).powi(2)).sum::<f64>() / n;
    let kl = latent_kl(&post.mu, &post.log_var, center);
    let g_img: Vec<f64> = recon.iter().zip(image).map(|(r, x)| 2.0 * (r - x) / n).collect();
    let (dec, g_z) = vae.decoder.backward(&dec_cache, &g_img);
    let g_mu: Vec<f64> = (0..LATENT_DIM).map(|d| g_z[d] + gamma * (post.mu[d] - center[d])).collect();
    let g_lv: Vec<f64> = (0..LATENT_DIM)
        .map(|d| g_z[d] * 0.5 * sigma[d] * eps[d] + gamma * 0.5 * (post.log_var[d].exp() - 1.0))
        .collect();
    let enc = vae.encoder.backward(&enc_cache, &g_mu, &g_lv);
    Ok(SampleGrad {
        loss: mse + gamma * kl,
        enc,
        dec,
    })
}

/// Batch-mean loss and gradients for fixed reparameterization noise
/// (`eps[i]` belongs to `images[i]`). Returns (loss, encoder grads,
/// decoder grads). Summation order is fixed, so results are bit-stable.
pub fn vae_loss_on(
    vae: &Vae,
    images: &[&[f64]],
    labels: &[usize],
    eps: &[Vec<f64>],
    gamma: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let b = images.len();
    if b == 0 {
        return Err(Error::Empty("vae batch"));
    }
    let per: Vec<SampleGrad> = (0..b)
        .into_par_iter()
        .map(|i| sample_grad(vae, images[i], &vae.latent.centers[labels[i]], &eps[i], gamma))
        .collect::<Result<_>>()?;
    let mut enc = vec![0.0; vae.encoder.param_count()];
    let mut dec = vec![0.0; vae.decoder.param_count()];
    let mut loss = 0.0;
    for g in &per {
        loss += g.loss;
        enc.iter_mut().zip(&g.enc).for_each(|(a, v)| *a += v);
        dec.iter_mut().zip(&g.dec).for_each(|(a, v)| *a += v);
    }
    let inv = 1.0 / b as f64;
    enc.iter_mut().chain(dec.iter_mut()).for_each(|v| *v *= inv);
    Ok((loss * inv, enc, dec))
}

/// Mean reconstruction MSE (decoding the posterior mean) and mean KL over a
/// dataset.
pub fn vae_metrics(vae: &Vae, images: &[Vec<f64>], labels: &[usize]) -> Result<(f64, f64)> {
    let parts: Vec<(f64, f64)> = images
        .par_iter()
        .zip(labels)
        .map(|(img, &l)| {
            let (post, _) = vae.encoder.forward(img)?;
            let recon = vae.decoder.decode(&post.mu)?;
            let mse = recon.iter().zip(img).map(|(r, x)| (r - x).powi(2)).sum::<f64>() / IMAGE_LEN as f64;
            Ok((mse, latent_kl(&post.mu, &post.log_var, &vae.latent.centers[l])))
        })
        .collect::<Result<_>>()?;
    let n = parts.len().max(1) as f64;
    Ok((
        parts.iter().map(|p| p.0).sum::<f64>() / n,
        parts.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainedVae {
    pub vae: Vae,
    pub losses: Vec<f64>,
}

/// Trains encoder and decoder on 12x12 images in [-1, 1].
pub fn train_vae(
    images: &[Vec<f64>],
    labels: &[usize],
    gamma: f64,
    latent: &LatentSpec,
    config: &TrainConfig,
) -> Result<TrainedVae> {
    config.validate()?;
    latent.validate()?;
    if images.is_empty() {
        return Err(Error::Empty("vae training images"));
    }
    if labels.len() != images.len() {
        return Err(Error::Dimension {
            context: "vae labels",
            expected: images.len(),
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= latent.classes()) {
        return Err(Error::Label {
            label: bad,
            classes: latent.classes(),
        });
    }
    if let Some(img) = images.iter().find(|img| img.len() != IMAGE_LEN) {
        return Err(Error::Dimension {
            context: "vae image",
            expected: IMAGE_LEN,
            got: img.len(),
        });
    }
    if !(gamma >= 0.0) {
        return Err(Error::Config("vae: gamma must be >= 0".into()));
    }
    let mut vae = Vae {
        encoder: VaeEncoder::new(derive_seed(config.seed, 20)),
        decoder: VaeDecoder::new(derive_seed(config.seed, 21)),
        latent: latent.clone(),
    };
    let n_enc = vae.encoder.param_count();
    let mut params = vae.encoder.params();
    params.extend(vae.decoder.params());
    let mut opt = Sgd::new(config, params.len());
    let mut rng = from_seed(derive_seed(config.seed, 22));
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..images.len())).collect();
        let batch: Vec<&[f64]> = idx.iter().map(|&i| images[i].as_slice()).collect();
        let batch_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let eps: Vec<Vec<f64>> = (0..idx.len()).map(|_| normal_vec(&mut rng, LATENT_DIM)).collect();
        let (loss, mut grad, dec) = vae_loss_on(&vae, &batch, &batch_labels, &eps, gamma)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        losses.push(loss);
        grad.extend(dec);
        opt.step(&mut params, &grad);
        vae.encoder.set_params(&params[..n_enc]);
        vae.decoder.set_params(&params[n_enc..]);
    }
    Ok(TrainedVae { vae, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        assert_eq!(latent_kl(&[0.3, -1.0], &[0.0, 0.0], &[0.3, -1.0]), 0.0);
        assert!(latent_kl(&[0.0, 0.0], &[0.5, -0.5], &[0.0, 0.0]) > 0.0);
        // mean shift only: 0.5 |dmu|^2
        assert!((latent_kl(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let spec = LatentSpec::default();
        let img = vec![vec![0.0; IMAGE_LEN]];
        assert!(train_vae(&[], &[], 0.5, &spec, &cfg).is_err());
        assert!(train_vae(&img, &[3], 0.5, &spec, &cfg).is_err());
        assert!(train_vae(&[vec![0.0; 10]], &[0], 0.5, &spec, &cfg).is_err());
        assert!(train_vae(&img, &[0], -1.0, &spec, &cfg).is_err());
    }
}
