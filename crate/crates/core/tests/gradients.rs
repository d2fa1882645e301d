// SPDX-License-Identifier: Apache-2.0

//! Analytic gradients against central finite differences.

use memdiff::data::synthetic_glyphs;
use memdiff::latent::conv::{FeatureMap, Kernel};
use memdiff::latent::{LatentSpec, Vae, VaeDecoder, VaeEncoder, LATENT_DIM};
use memdiff::rng::{from_seed, normal_vec};
use memdiff::sde::VPSchedule;
use memdiff::training::dsm::{draw_batch, loss_on};
use memdiff::training::mlp::{EmbeddingSeeds, ScoreNet};
use memdiff::training::vae::vae_loss_on;
use ndarray::Array2;

const H: f64 = 1e-6;
const REL_TOL: f64 = 1e-4;

/// Checks `analytic` against central differences of `f` around `p`.
/// Entries whose magnitude is below `floor` on both sides only need to
/// agree to `floor * REL_TOL`.
fn check(name: &str, p: &[f64], analytic: &[f64], floor: f64, f: impl Fn(&[f64]) -> f64) {
    assert_eq!(p.len(), analytic.len(), "{name}: gradient length");
    let mut worst = 0.0f64;
    let mut q = p.to_vec();
    for i in 0..p.len() {
        q[i] = p[i] + H;
        let up = f(&q);
        q[i] = p[i] - H;
        let down = f(&q);
        q[i] = p[i];
        let fd = (up - down) / (2.0 * H);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max(rel);
        assert!(rel <= REL_TOL, "{name}[{i}]: analytic {} vs finite difference {fd} (rel {rel:.2e})", analytic[i]);
    }
    eprintln!("{name}: {} parameters, worst relative error {worst:.2e}", p.len());
}

#[test]
fn score_net_dsm_gradient() {
    for conditional in [false, true] {
        let classes = conditional.then_some(3);
        let net = ScoreNet::new(2, 14, classes, &EmbeddingSeeds::default(), 5).unwrap();
        let mut rng = from_seed(9);
        let x0 = Array2::from_shape_vec((16, 2), normal_vec(&mut rng, 32)).unwrap();
        let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let batch = draw_batch(
            &net,
            &x0,
            conditional.then_some(labels.as_slice()),
            &VPSchedule::default(),
            0.2,
            1e-3,
            &mut rng,
        )
        .unwrap();
        let (_, grad) = loss_on(&net, &batch);
        let params = net.mlp.params();
        check("score net", &params, &grad, 1e-6, |p| {
            let mut n = net.clone();
            n.mlp.set_params(p);
            loss_on(&n, &batch).0
        });
    }
}

fn small_vae() -> (Vae, Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>) {
    let ds = synthetic_glyphs(2, &mut from_seed(3));
    let vae = Vae {
        encoder: VaeEncoder::new(11),
        decoder: VaeDecoder::new(12),
        latent: LatentSpec::default(),
    };
    let mut rng = from_seed(13);
    let eps = (0..ds.len()).map(|_| normal_vec(&mut rng, LATENT_DIM)).collect();
    (vae, ds.images, ds.labels, eps)
}

#[test]
fn vae_encoder_and_decoder_gradients() {
    let (vae, images, labels, eps) = small_vae();
    let refs: Vec<&[f64]> = images.iter().map(Vec::as_slice).collect();
    let (_, enc, dec) = vae_loss_on(&vae, &refs, &labels, &eps, 0.5).unwrap();
    check("vae encoder", &vae.encoder.params(), &enc, 1e-6, |p| {
        let mut v = vae.clone();
        v.encoder.set_params(p);
        vae_loss_on(&v, &refs, &labels, &eps, 0.5).unwrap().0
    });
    check("vae decoder", &vae.decoder.params(), &dec, 1e-6, |p| {
        let mut v = vae.clone();
        v.decoder.set_params(p);
        vae_loss_on(&v, &refs, &labels, &eps, 0.5).unwrap().0
    });
}

#[test]
fn decoder_latent_gradient() {
    let dec = VaeDecoder::new(21);
    let target = normal_vec(&mut from_seed(22), 144);
    let loss = |z: &[f64]| {
        let (img, _) = dec.forward(z).unwrap();
        img.iter().zip(&target).map(|(a, b)| 0.5 * (a - b).powi(2)).sum::<f64>()
    };
    for z in [[0.3, -0.7], [-1.2, 0.4], [0.0, 1.0]] {
        let (img, cache) = dec.forward(&z).unwrap();
        let g_img: Vec<f64> = img.iter().zip(&target).map(|(a, b)| a - b).collect();
        let (_, g_z) = dec.backward(&cache, &g_img);
        check("decoder latent", &z, &g_z, 1e-6, loss);
    }
}

#[test]
fn deconv_weight_and_input_gradients() {
    let mut kern = Kernel::zeros(4, 1, 4, 2, 2);
    kern.w = normal_vec(&mut from_seed(31), kern.w.len());
    let x = FeatureMap::from_vec(4, 7, 7, normal_vec(&mut from_seed(32), 4 * 49)).unwrap();
    let y = FeatureMap::from_vec(1, 12, 12, normal_vec(&mut from_seed(33), 144)).unwrap();
    // f = <y, deconv(x; w)>: linear in both w and x
    let f_w = |w: &[f64]| {
        let mut k = kern.clone();
        k.w = w.to_vec();
        y.dot(&k.deconv(&x).unwrap())
    };
    check("deconv weights", &kern.w, &kern.weight_grad(&x, &y), 1e-6, f_w);
    let g_x = kern.conv(&y, 7, 7).unwrap();
    check("deconv input", &x.data, &g_x.data, 1e-6, |d| {
        let xm = FeatureMap::from_vec(4, 7, 7, d.to_vec()).unwrap();
        y.dot(&kern.deconv(&xm).unwrap())
    });
}
