// SPDX-License-Identifier: Apache-2.0

//! VAE encoder/decoder for latent diffusion.
//!
//! Decoder: linear 2 -> 8x3x3, transposed conv 8 -> 4 (k3, s2) to 7x7, ReLU,
//! transposed conv 4 -> 1 (k4, s2, pad 2) to 12x12, tanh. Each layer input
//! passes through the same clamp window the analog crossbars apply, so the
//! digital decoder is an exact twin of the deployed one.
//!
//! Encoder (digital only) mirrors it: conv 1 -> 4 (k4, s2, pad 2) to 7x7,
//! ReLU, conv 4 -> 8 (k3, s2) to 3x3, ReLU, linear 72 -> (mu, log sigma^2).

pub mod conv;

use std::f64::consts::TAU;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::analog_net::{deploy_layer, Activation, AnalogMLP, ClampConfig};
use crate::device::DeviceConfig;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, from_seed, normal, normal_vec, SimRng};
use crate::training::mlp::{DenseLayer, InputRange};
use conv::{FeatureMap, Kernel};

pub const IMAGE_SIDE: usize = 12;
pub const IMAGE_LEN: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const LATENT_DIM: usize = 2;

const SEED_C: usize = 8;
const SEED_SIDE: usize = 3;
const MID_C: usize = 4;
const MID_SIDE: usize = 7;

/// Latent space with one target centre per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub centers: Vec<[f64; 2]>,
}

impl Default for LatentSpec {
    /// Radius 1, angles 90/210/330 degrees (H, K, U).
    fn default() -> Self {
        Self::on_circle(1.0, &[90.0, 210.0, 330.0])
    }
}

impl LatentSpec {
    pub fn on_circle(radius: f64, degrees: &[f64]) -> Self {
        Self {
            centers: degrees
                .iter()
                .map(|d| {
                    let a = d * TAU / 360.0;
                    [radius * a.cos(), radius * a.sin()]
                })
                .collect(),
        }
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.centers.len() {
            for j in i + 1..self.centers.len() {
                let d = dist(&self.centers[i], &self.centers[j]);
                if d <= 1.0 {
                    return Err(Error::Config(format!("latent centres {i} and {j} are only {d:.3} apart")));
                }
            }
        }
        Ok(())
    }

    pub fn nearest(&self, z: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, c) in self.centers.iter().enumerate() {
            let d = dist(z, c);
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn init_vec(n: usize, fan_in: usize, seed: u64) -> Vec<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    normal_vec(&mut from_seed(seed), n).into_iter().map(|v| v * std).collect()
}

fn relu_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.max(0.0));
}

fn mask_relu(grad: &mut [f64], pre: &[f64]) {
    grad.iter_mut().zip(pre).for_each(|(g, z)| {
        if *z <= 0.0 {
            *g = 0.0
        }
    });
}

fn add_channel_bias(m: &mut FeatureMap, bias: &[f64]) {
    let plane = m.h * m.w;
    for (c, b) in bias.iter().enumerate() {
        m.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums(m: &FeatureMap) -> Vec<f64> {
    let plane = m.h * m.w;
    (0..m.c).map(|c| m.data[c * plane..(c + 1) * plane].iter().sum()).collect()
}

/// `w` is out x in, row-major.
fn linear(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

fn push_all(out: &mut Vec<f64>, parts: &[&[f64]]) {
    for p in parts {
        out.extend_from_slice(p);
    }
}

fn take_into(src: &mut std::slice::Iter<'_, f64>, dst: &mut [f64]) {
    dst.iter_mut().for_each(|d| *d = *src.next().expect("parameter vector too short"));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeDecoder {
    /// 72 x 2
    pub lin_w: Vec<f64>,
    pub lin_b: Vec<f64>,
    pub deconv1: Kernel,
    pub deconv1_b: Vec<f64>,
    pub deconv2: Kernel,
    pub deconv2_b: Vec<f64>,
    pub input_range: InputRange,
}

/// Forward intermediates of the decoder.
pub struct DecoderCache {
    z_raw: Vec<f64>,
    seed_raw: FeatureMap,
    mid_pre: FeatureMap,
    mid_raw: FeatureMap,
    out: Vec<f64>,
}

impl VaeDecoder {
    pub fn new(seed: u64) -> Self {
        let seed_len = SEED_C * SEED_SIDE * SEED_SIDE;
        let mut deconv1 = Kernel::zeros(SEED_C, MID_C, 3, 2, 0);
        deconv1.w = init_vec(deconv1.w.len(), SEED_C * 9 / 4, derive_seed(seed, 1));
        let mut deconv2 = Kernel::zeros(MID_C, 1, 4, 2, 2);
        deconv2.w = init_vec(deconv2.w.len(), MID_C * 16 / 4, derive_seed(seed, 2));
        Self {
            lin_w: init_vec(seed_len * LATENT_DIM, LATENT_DIM, derive_seed(seed, 0)),
            lin_b: vec![0.0; seed_len],
            deconv1,
            deconv1_b: vec![0.0; MID_C],
            deconv2,
            deconv2_b: vec![0.0],
            input_range: InputRange::default(),
        }
    }

    fn clamp(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.input_range.apply(x)).collect()
    }

    fn clamp_grad(&self, g: &mut [f64], raw: &[f64]) {
        g.iter_mut().zip(raw).for_each(|(gi, &x)| {
            if !self.input_range.passes_gradient(x) {
                *gi = 0.0
            }
        });
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, DecoderCache)> {
        if z.len() != LATENT_DIM {
            return Err(Error::Dimension {
                context: "latent vector",
                expected: LATENT_DIM,
                got: z.len(),
            });
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vector"));
        }
        let seed_vals = linear(&self.lin_w, &self.lin_b, &self.clamp(z));
        let seed_raw = FeatureMap::from_vec(SEED_C, SEED_SIDE, SEED_SIDE, seed_vals)?;
        let seed_in = FeatureMap {
            data: self.clamp(&seed_raw.data),
            ..seed_raw.clone()
        };
        let mut mid_pre = self.deconv1.deconv(&seed_in)?;
        add_channel_bias(&mut mid_pre, &self.deconv1_b);
        let mut mid_raw = mid_pre.clone();
        relu_in_place(&mut mid_raw.data);
        let mid_in = FeatureMap {
            data: self.clamp(&mid_raw.data),
            ..mid_raw.clone()
        };
        let mut out_map = self.deconv2.deconv(&mid_in)?;
        add_channel_bias(&mut out_map, &self.deconv2_b);
        let out: Vec<f64> = out_map.data.iter().map(|v| v.tanh()).collect();
        let cache = DecoderCache {
            z_raw: z.to_vec(),
            seed_raw,
            mid_pre,
            mid_raw,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    /// Digital decode of one latent vector to a 12x12 image in [-1, 1].
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(z)?.0)
    }

    /// Parameter gradient and dLoss/dz given dLoss/dImage.
    pub fn backward(&self, cache: &DecoderCache, grad_img: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g_pre: Vec<f64> = grad_img.iter().zip(&cache.out).map(|(g, y)| g * (1.0 - y * y)).collect();
        let g_out = FeatureMap::from_vec(1, IMAGE_SIDE, IMAGE_SIDE, g_pre).expect("image shape");
        let mid_in = FeatureMap {
            data: self.clamp(&cache.mid_raw.data),
            ..cache.mid_raw.clone()
        };
        let g_d2 = self.deconv2.weight_grad(&mid_in, &g_out);
        let g_d2b = channel_sums(&g_out);
        let mut g_mid = self.deconv2.conv(&g_out, MID_SIDE, MID_SIDE).expect("decoder shapes");
        self.clamp_grad(&mut g_mid.data, &cache.mid_raw.data);
        mask_relu(&mut g_mid.data, &cache.mid_pre.data);
        let seed_in = FeatureMap {
            data: self.clamp(&cache.seed_raw.data),
            ..cache.seed_raw.clone()
        };
        let g_d1 = self.deconv1.weight_grad(&seed_in, &g_mid);
        let g_d1b = channel_sums(&g_mid);
        let mut g_seed = self.deconv1.conv(&g_mid, SEED_SIDE, SEED_SIDE).expect("decoder shapes");
        self.clamp_grad(&mut g_seed.data, &cache.seed_raw.data);
        let z_in = self.clamp(&cache.z_raw);
        let mut g_lw = vec![0.0; self.lin_w.len()];
        let mut g_z = vec![0.0; LATENT_DIM];
        for (o, g) in g_seed.data.iter().enumerate() {
            for d in 0..LATENT_DIM {
                g_lw[o * LATENT_DIM + d] += g * z_in[d];
                g_z[d] += g * self.lin_w[o * LATENT_DIM + d];
            }
        }
        self.clamp_grad(&mut g_z, &cache.z_raw);
        let mut grads = Vec::with_capacity(self.param_count());
        push_all(&mut grads, &[&g_lw, &g_seed.data, &g_d1, &g_d1b, &g_d2, &g_d2b]);
        (grads, g_z)
    }

    pub fn param_count(&self) -> usize {
        self.lin_w.len() + self.lin_b.len() + self.deconv1.w.len() + self.deconv1_b.len() + self.deconv2.w.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        push_all(
            &mut p,
            &[&self.lin_w, &self.lin_b, &self.deconv1.w, &self.deconv1_b, &self.deconv2.w, &self.deconv2_b],
        );
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "decoder parameter vector length");
        let mut it = p.iter();
        take_into(&mut it, &mut self.lin_w);
        take_into(&mut it, &mut self.lin_b);
        take_into(&mut it, &mut self.deconv1.w);
        take_into(&mut it, &mut self.deconv1_b);
        take_into(&mut it, &mut self.deconv2.w);
        take_into(&mut it, &mut self.deconv2_b);
    }

    /// The decoder as three dense layers (deconvolutions unrolled), ready for
    /// crossbar deployment.
    pub fn dense_layers(&self) -> Result<[DenseLayer; 3]> {
        let seed_len = SEED_C * SEED_SIDE * SEED_SIDE;
        let lin = DenseLayer {
            w: Array2::from_shape_vec((seed_len, LATENT_DIM), self.lin_w.clone())
                .map_err(|e| Error::Config(e.to_string()))?,
            b: Array1::from(self.lin_b.clone()),
        };
        let per_channel = |bias: &[f64], plane: usize| Array1::from_iter(bias.iter().flat_map(|b| std::iter::repeat_n(*b, plane)));
        let d1 = DenseLayer {
            w: self.deconv1.unrolled(SEED_SIDE, SEED_SIDE)?,
            b: per_channel(&self.deconv1_b, MID_SIDE * MID_SIDE),
        };
        let d2 = DenseLayer {
            w: self.deconv2.unrolled(MID_SIDE, MID_SIDE)?,
            b: per_channel(&self.deconv2_b, IMAGE_LEN),
        };
        Ok([lin, d1, d2])
    }
}

/// Decoder deployed on crossbars: the deconvolutions run as unrolled
/// matrix-vector products, so decoding sees write and read noise.
#[derive(Debug, Clone)]
pub struct AnalogDecoder {
    pub net: AnalogMLP,
}

impl AnalogDecoder {
    pub fn deploy(
        decoder: &VaeDecoder,
        config: &DeviceConfig,
        clamp: ClampConfig,
        unit_volt: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        clamp.validate()?;
        let [lin, d1, d2] = decoder.dense_layers()?;
        let layers = vec![
            deploy_layer(&lin, Activation::Identity, false, unit_volt, config, rng)?,
            deploy_layer(&d1, Activation::Relu, false, unit_volt, config, rng)?,
            deploy_layer(&d2, Activation::Identity, false, unit_volt, config, rng)?,
        ];
        Ok(Self {
            net: AnalogMLP {
                layers,
                clamp,
                unit_volt,
            },
        })
    }

    pub fn decode(&self, z: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vector"));
        }
        Ok(self.net.forward(z, None, rng)?.output.iter().map(|v| v.tanh()).collect())
    }
}

/// Where a decode runs.
pub enum DecodeMode<'a> {
    Digital,
    Analog(&'a AnalogDecoder, &'a mut SimRng),
}

pub fn decode(decoder: &VaeDecoder, z: &[f64], mode: DecodeMode<'_>) -> Result<Vec<f64>> {
    match mode {
        DecodeMode::Digital => decoder.decode(z),
        DecodeMode::Analog(a, rng) => a.decode(z, rng),
    }
}

/// Gaussian posterior parameters of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl Posterior {
    pub fn sigma(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| (0.5 * l).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeEncoder {
    pub conv1: Kernel,
    pub conv1_b: Vec<f64>,
    pub conv2: Kernel,
    pub conv2_b: Vec<f64>,
    /// 4 x 72: rows 0..2 give mu, rows 2..4 give log sigma^2.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

pub struct EncoderCache {
    image: FeatureMap,
    h1_pre: FeatureMap,
    h1: FeatureMap,
    h2_pre: FeatureMap,
    h2: FeatureMap,
}

impl VaeEncoder {
    pub fn new(seed: u64) -> Self {
        let mut conv1 = Kernel::zeros(MID_C, 1, 4, 2, 2);
        conv1.w = init_vec(conv1.w.len(), 16, derive_seed(seed, 10));
        let mut conv2 = Kernel::zeros(SEED_C, MID_C, 3, 2, 0);
        conv2.w = init_vec(conv2.w.len(), MID_C * 9, derive_seed(seed, 11));
        let flat = SEED_C * SEED_SIDE * SEED_SIDE;
        let mut head_w = init_vec(2 * LATENT_DIM * flat, flat, derive_seed(seed, 12));
        // start with a small posterior variance head
        head_w[LATENT_DIM * flat..].iter_mut().for_each(|v| *v *= 0.1);
        Self {
            conv1,
            conv1_b: vec![0.0; MID_C],
            conv2,
            conv2_b: vec![0.0; SEED_C],
            head_w,
            head_b: vec![0.0; 2 * LATENT_DIM],
        }
    }

    pub fn forward(&self, image: &[f64]) -> Result<(Posterior, EncoderCache)> {
        let image = FeatureMap::from_vec(1, IMAGE_SIDE, IMAGE_SIDE, image.to_vec())?;
        let mut h1_pre = self.conv1.conv(&image, MID_SIDE, MID_SIDE)?;
        add_channel_bias(&mut h1_pre, &self.conv1_b);
        let mut h1 = h1_pre.clone();
        relu_in_place(&mut h1.data);
        let mut h2_pre = self.conv2.conv(&h1, SEED_SIDE, SEED_SIDE)?;
        add_channel_bias(&mut h2_pre, &self.conv2_b);
        let mut h2 = h2_pre.clone();
        relu_in_place(&mut h2.data);
        let head = linear(&self.head_w, &self.head_b, &h2.data);
        let post = Posterior {
            mu: head[..LATENT_DIM].to_vec(),
            log_var: head[LATENT_DIM..].to_vec(),
        };
        Ok((
            post,
            EncoderCache {
                image,
                h1_pre,
                h1,
                h2_pre,
                h2,
            },
        ))
    }

    /// Posterior mean and standard deviation of one 12x12 image.
    pub fn encode(&self, image: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if image.len() != IMAGE_LEN {
            return Err(Error::Dimension {
                context: "image",
                expected: IMAGE_LEN,
                got: image.len(),
            });
        }
        let (post, _) = self.forward(image)?;
        let sigma = post.sigma();
        Ok((post.mu, sigma))
    }

    /// Parameter gradient given dLoss/dmu and dLoss/dlog_var.
    pub fn backward(&self, cache: &EncoderCache, g_mu: &[f64], g_log_var: &[f64]) -> Vec<f64> {
        let g_head: Vec<f64> = g_mu.iter().chain(g_log_var).copied().collect();
        let flat = cache.h2.len();
        let mut g_hw = vec![0.0; self.head_w.len()];
        let mut g_h2 = vec![0.0; flat];
        for (o, g) in g_head.iter().enumerate() {
            for i in 0..flat {
                g_hw[o * flat + i] += g * cache.h2.data[i];
                g_h2[i] += g * self.head_w[o * flat + i];
            }
        }
        mask_relu(&mut g_h2, &cache.h2_pre.data);
        let g_h2 = FeatureMap::from_vec(SEED_C, SEED_SIDE, SEED_SIDE, g_h2).expect("encoder shapes");
        let g_c2 = self.conv2.weight_grad(&g_h2, &cache.h1);
        let g_c2b = channel_sums(&g_h2);
        let mut g_h1 = self.conv2.expand(&g_h2, MID_SIDE, MID_SIDE).expect("encoder shapes");
        mask_relu(&mut g_h1.data, &cache.h1_pre.data);
        let g_c1 = self.conv1.weight_grad(&g_h1, &cache.image);
        let g_c1b = channel_sums(&g_h1);
        let mut grads = Vec::with_capacity(self.param_count());
        push_all(&mut grads, &[&g_c1, &g_c1b, &g_c2, &g_c2b, &g_hw, &g_head]);
        grads
    }

    pub fn param_count(&self) -> usize {
        self.conv1.w.len() + self.conv1_b.len() + self.conv2.w.len() + self.conv2_b.len() + self.head_w.len() + self.head_b.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        push_all(&mut p, &[&self.conv1.w, &self.conv1_b, &self.conv2.w, &self.conv2_b, &self.head_w, &self.head_b]);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count(), "encoder parameter vector length");
        let mut it = p.iter();
        take_into(&mut it, &mut self.conv1.w);
        take_into(&mut it, &mut self.conv1_b);
        take_into(&mut it, &mut self.conv2.w);
        take_into(&mut it, &mut self.conv2_b);
        take_into(&mut it, &mut self.head_w);
        take_into(&mut it, &mut self.head_b);
    }
}

/// `z = mu + sigma * eps`, `eps ~ N(0, I)`.
pub fn reparameterize(mu: &[f64], sigma: &[f64], rng: &mut SimRng) -> Vec<f64> {
    mu.iter().zip(sigma).map(|(m, s)| m + s * normal(rng)).collect()
}

/// Encoder plus decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vae {
    pub encoder: VaeEncoder,
    pub decoder: VaeDecoder,
    pub latent: LatentSpec,
}
