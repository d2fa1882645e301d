// SPDX-License-Identifier: Apache-2.0

//! Hand-evaluated input/output examples for each module.

use memdiff::analog_net::{relu, ClampConfig};
use memdiff::data::emnist::preprocess;
use memdiff::data::{ring_sampler, synthetic_glyphs, RingSpec};
use memdiff::device::{conductance_to_weight, program_cell, program_from, weight_to_conductance, Crossbar, DeviceConfig};
use memdiff::embedding::{ConditionEmbedding, TimeEmbedding};
use memdiff::eval::{histogram_kl, nearest_center_accuracy, KlConfig};
use memdiff::latent::conv::deconv_out;
use memdiff::rng::from_seed;
use memdiff::sde::{cfg_score, f_ode, f_sde_det, EvalCtx, GuidanceConfig, ScoreFn, VPSchedule, ZeroScore};
use memdiff::training::vae::latent_kl;
use memdiff::Result;
use ndarray::array;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn ctx() -> EvalCtx {
    EvalCtx::new(from_seed(0))
}

/// Constant score, with a different value for the null label.
struct Fixed {
    cond: Vec<f64>,
    uncond: Vec<f64>,
}

impl ScoreFn for Fixed {
    fn dim(&self) -> usize {
        self.cond.len()
    }
    fn eval(&self, _x: &[f64], _t: f64, label: Option<usize>, _ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        Ok(if label.is_some() { self.cond.clone() } else { self.uncond.clone() })
    }
}

#[test]
fn weight_to_conductance_examples() {
    let cfg = DeviceConfig::default();
    assert!(close(weight_to_conductance(0.0, 1.0, &cfg).unwrap(), 0.05, 1e-15));
    assert!(close(weight_to_conductance(0.05, 1.0, &cfg).unwrap(), 0.10, 1e-15));
    assert!(close(weight_to_conductance(-0.08, 1.0, &cfg).unwrap(), 0.02, 1e-15));
    for w in [-0.03, -0.01, 0.0, 0.02, 0.05] {
        let g = weight_to_conductance(w, 1.0, &cfg).unwrap();
        assert!(close(conductance_to_weight(g, 1.0, &cfg), w, 1e-15));
    }
}

#[test]
fn program_cell_examples() {
    let cfg = DeviceConfig::default();
    let (g, cycles) = program_cell(0.06, &mut from_seed(4), &cfg).unwrap();
    assert!((0.059..=0.061).contains(&g) && cycles >= 1);
    let (g, cycles) = program_from(0.07, 0.07, &mut from_seed(4), &cfg).unwrap();
    assert_eq!((g, cycles), (0.07, 1));
    let a = program_cell(0.08, &mut from_seed(9), &cfg).unwrap();
    let b = program_cell(0.08, &mut from_seed(9), &cfg).unwrap();
    assert_eq!(a, b);
    let strict = DeviceConfig {
        write_tol: 0.0,
        ..cfg.clone()
    };
    assert!(program_cell(0.0612345, &mut from_seed(1), &strict).is_err());
    let uniform = Crossbar::program(&array![[0.05, 0.05], [0.05, 0.05]], &cfg, &mut from_seed(2)).unwrap();
    assert!(uniform.g_programmed().iter().all(|g| (g - 0.05).abs() <= cfg.write_tol));
}

#[test]
fn crossbar_matvec_examples() {
    let cfg = DeviceConfig::noiseless();
    let one = Crossbar::from_programmed(array![[0.07]], &cfg).unwrap();
    assert!(close(one.matvec(&[0.1], &mut from_seed(0)).unwrap()[0], 0.002, 1e-15));
    assert!(one.matvec(&[0.0], &mut from_seed(0)).unwrap() == vec![0.0]);
    let ident = Crossbar::from_programmed(array![[0.10, 0.05], [0.05, 0.10]], &cfg).unwrap();
    let i = ident.matvec(&[0.1, -0.1], &mut from_seed(0)).unwrap();
    assert!(close(i[0], 0.005, 1e-15) && close(i[1], -0.005, 1e-15));
    let w = one.read_matrix(&mut from_seed(3));
    assert!(close(w[[0, 0]], 0.02, 1e-15));
}

#[test]
fn clamp_and_relu_examples() {
    let c = ClampConfig::default();
    assert_eq!(c.apply(&[0.0, 0.55, -0.31]), vec![0.0, 0.4, -0.2]);
    assert_eq!(relu(&[0.3, -0.2, 0.0]), vec![0.3, 0.0, 0.0]);
}

#[test]
fn embedding_examples() {
    let e = TimeEmbedding::new(14, 1).unwrap();
    let at0 = e.embed(0.0);
    assert!(at0[..7].iter().all(|&v| v == 0.0) && at0[7..].iter().all(|&v| v == 1.0));
    let one = TimeEmbedding::from_freqs(vec![1.0]).embed(0.25);
    assert!(close(one[0], 1.0, 1e-15) && close(one[1], 0.0, 1e-15));
    let c = ConditionEmbedding::new(3, 14, 2).unwrap();
    assert_eq!(c.embed(None).unwrap(), vec![0.0; 14]);
    assert!(c.embed(Some(3)).is_err());
    let rows: Vec<Vec<f64>> = (0..3).map(|k| c.embed(Some(k)).unwrap()).collect();
    assert!(rows[0] != rows[1] && rows[1] != rows[2] && rows[0] != rows[2]);
}

#[test]
fn schedule_examples() {
    let s = VPSchedule::default();
    assert!(close(s.beta_at(0.0), 0.001, 1e-15));
    assert!(close(s.beta_at(1.0), 0.5, 1e-15));
    assert!(close(s.beta_at(0.5), 0.2505, 1e-15));
    assert_eq!(s.drift(&[0.0, 0.0], 0.3), vec![0.0, 0.0]);
    let d = s.drift(&[1.0, 0.0], 1.0);
    assert!(close(d[0], -0.25, 1e-15) && d[1] == 0.0);
    assert!(close(s.diffusion(0.0), 0.001f64.sqrt(), 1e-15));
    assert!(close(s.diffusion(1.0), 0.5f64.sqrt(), 1e-15));
    let m0 = s.marginal(0.0);
    assert_eq!((m0.mean_coef, m0.sigma), (1.0, 0.0));
    let m1 = s.marginal(1.0);
    assert!(close(m1.mean_coef, (-0.12525f64).exp(), 1e-12));
    assert!(close(m1.sigma, (1.0 - (-0.2505f64).exp()).sqrt(), 1e-12));
}

#[test]
fn guidance_and_rhs_examples() {
    let s = VPSchedule::default();
    let f = Fixed {
        cond: vec![1.0, 0.0],
        uncond: vec![0.0, 1.0],
    };
    let g = cfg_score(&f, &[0.0, 0.0], 0.5, 0, &GuidanceConfig { lambda: 1.0 }, &mut ctx()).unwrap();
    assert_eq!(g, vec![2.0, -1.0]);
    let g0 = cfg_score(&f, &[0.0, 0.0], 0.5, 0, &GuidanceConfig { lambda: 0.0 }, &mut ctx()).unwrap();
    assert_eq!(g0, vec![1.0, 0.0]);

    let ones = Fixed {
        cond: vec![1.0, 1.0],
        uncond: vec![1.0, 1.0],
    };
    let o = f_ode(&ones, &s, &[0.0, 0.0], 1.0, None, None, &mut ctx()).unwrap();
    assert!(close(o[0], -0.25, 1e-15) && close(o[1], -0.25, 1e-15));
    let e = Fixed {
        cond: vec![1.0, 0.0],
        uncond: vec![1.0, 0.0],
    };
    let sd = f_sde_det(&e, &s, &[0.0, 0.0], 1.0, None, None, &mut ctx()).unwrap();
    assert!(close(sd[0], -0.5, 1e-15) && sd[1] == 0.0);
    let z = f_ode(&ZeroScore(2), &s, &[0.3, -0.4], 0.7, None, None, &mut ctx()).unwrap();
    assert_eq!(z, s.drift(&[0.3, -0.4], 0.7));
}

#[test]
fn latent_kl_and_deconv_shape_examples() {
    assert_eq!(latent_kl(&[1.0, -1.0], &[0.0, 0.0], &[1.0, -1.0]), 0.0);
    assert_eq!(deconv_out(5, 3, 2, 0).unwrap(), 11);
}

#[test]
fn data_examples() {
    let exact = RingSpec {
        radial_sigma: 0.0,
        n: 50,
        ..RingSpec::default()
    };
    let pts = ring_sampler(&exact, &mut from_seed(1)).unwrap();
    assert!(pts.rows().into_iter().all(|r| close(r[0].hypot(r[1]), 1.0, 1e-12)));

    assert!(preprocess(&[0u8; 784]).unwrap().iter().all(|&v| v == -1.0));
    assert!(preprocess(&[255u8; 784]).unwrap().iter().all(|&v| v == 1.0));
    let checker: Vec<u8> = (0..784).map(|i| if (i / 28 + i % 28) % 2 == 0 { 0 } else { 255 }).collect();
    assert!(preprocess(&checker).unwrap().iter().all(|&v| v == 0.0));

    let ds = synthetic_glyphs(10, &mut from_seed(2));
    assert_eq!(ds.len(), 30);
    assert!(ds.images.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn metric_examples() {
    let cfg = KlConfig::default();
    let pts: Vec<Vec<f64>> = (0..200).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
    assert!(histogram_kl(&pts, &pts, &cfg).unwrap().abs() <= 1e-12);

    let far: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0] * 0.1 - 1.9, p[1] * 0.1 - 1.9]).collect();
    let kl = histogram_kl(&pts, &far, &cfg).unwrap();
    assert!(kl > 1.0 && kl <= (1.0 / cfg.pseudocount).ln() + 1e-9, "{kl}");

    let centers = [[0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]];
    let at: Vec<Vec<f64>> = centers.iter().map(|c| c.to_vec()).collect();
    assert_eq!(nearest_center_accuracy(&at, &[0, 1, 2], &centers).unwrap(), 1.0);
    // a class with no samples contributes nothing
    assert_eq!(nearest_center_accuracy(&at[..2], &[0, 1], &centers).unwrap(), 1.0);
}
