// SPDX-License-Identifier: Apache-2.0

//! Emulation of the closed-loop feedback integrator.
//!
//! Lab time `tau` runs from 0 to `lab_duration`; algorithm time follows
//! `t = max(T (1 - tau / lab_duration), t_min)`, so the recorded start of a
//! run is the diffusion end time `T`. Integration uses fine fixed steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, normal_vec, stream, SimRng};
use crate::sde::{f_ode, f_sde_det, EvalCtx, GuidanceConfig, ScoreFn, VPSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Ode,
    Sde,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Euler,
    Rk4,
    EulerMaruyama,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mode: Mode,
    pub method: Method,
    pub dt_lab: f64,
    pub lab_duration: f64,
    pub record_stride: usize,
    pub seed: u64,
    pub t_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Ode,
            method: Method::Euler,
            dt_lab: 1e-3,
            lab_duration: 1.0,
            record_stride: 10,
            seed: 7,
            t_min: 1e-3,
        }
    }
}

impl SolverConfig {
    pub fn ode(method: Method) -> Self {
        Self {
            mode: Mode::Ode,
            method,
            ..Self::default()
        }
    }

    pub fn sde() -> Self {
        Self {
            mode: Mode::Sde,
            method: Method::EulerMaruyama,
            ..Self::default()
        }
    }

    /// Number of fixed steps; fails unless `lab_duration / dt_lab` is integral.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt_lab > 0.0) || !(self.lab_duration > 0.0) {
            return Err(Error::Config("solver: dt_lab and lab_duration must be positive".into()));
        }
        let n = self.lab_duration / self.dt_lab;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-6 * n.max(1.0) || rounded < 1.0 {
            return Err(Error::Config(format!(
                "solver: lab_duration / dt_lab = {n} is not a positive integer"
            )));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        match (self.mode, self.method) {
            (Mode::Sde, Method::EulerMaruyama) | (Mode::Ode, Method::Euler) | (Mode::Ode, Method::Rk4) => {}
            (mode, method) => {
                return Err(Error::Config(format!("solver: method {method:?} not valid in {mode:?} mode")))
            }
        }
        if self.record_stride == 0 {
            return Err(Error::Config("solver: record_stride must be >= 1".into()));
        }
        if !(self.t_min >= 0.0) {
            return Err(Error::Config("solver: t_min must be >= 0".into()));
        }
        Ok(())
    }

    /// Algorithm time at lab step `k`.
    pub fn alg_time(&self, sched: &VPSchedule, k: usize, steps: usize) -> f64 {
        let frac = k as f64 / steps as f64;
        (sched.t_end * (1.0 - frac)).max(self.t_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Lab time of each recorded state (s).
    pub times: Vec<f64>,
    /// Algorithm time of each recorded state.
    pub alg_times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub label: Option<usize>,
    pub final_state: Vec<f64>,
    /// Number of analog clamp engagements over the run.
    pub saturations: u64,
}

pub fn sample_initial(n: usize, rng: &mut SimRng) -> Vec<f64> {
    normal_vec(rng, n)
}

fn add_scaled(x: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Integrates the reverse ODE or SDE from `x_init` (the pre-charged
/// integrator state at algorithm time `T`) down to `t_min`.
#[allow(clippy::too_many_arguments)]
pub fn integrate<S: ScoreFn + ?Sized>(
    score: &S,
    sched: &VPSchedule,
    config: &SolverConfig,
    x_init: &[f64],
    label: Option<usize>,
    guidance: Option<&GuidanceConfig>,
    ctx: &mut EvalCtx,
) -> Result<Trajectory> {
    config.validate()?;
    if x_init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    if x_init.len() != score.dim() {
        return Err(Error::Dimension {
            context: "initial state",
            expected: score.dim(),
            got: x_init.len(),
        });
    }
    let steps = config.steps()?;
    let dt_lab = config.lab_duration / steps as f64;
    let sat_before = ctx.saturations;

    let mut x = x_init.to_vec();
    let mut times = vec![0.0];
    let mut alg_times = vec![sched.t_end.max(config.t_min)];
    let mut states = vec![x.clone()];

    for k in 0..steps {
        let t = config.alg_time(sched, k, steps);
        let t_next = config.alg_time(sched, k + 1, steps);
        let dt = t_next - t;
        match config.method {
            Method::Euler => {
                let f = f_ode(score, sched, &x, t, label, guidance, ctx)?;
                x = add_scaled(&x, &f, dt);
            }
            Method::Rk4 => {
                let th = t + 0.5 * dt;
                let k1 = f_ode(score, sched, &x, t, label, guidance, ctx)?;
                let k2 = f_ode(score, sched, &add_scaled(&x, &k1, 0.5 * dt), th, label, guidance, ctx)?;
                let k3 = f_ode(score, sched, &add_scaled(&x, &k2, 0.5 * dt), th, label, guidance, ctx)?;
                let k4 = f_ode(score, sched, &add_scaled(&x, &k3, dt), t_next, label, guidance, ctx)?;
                for i in 0..x.len() {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            Method::EulerMaruyama => {
                let f = f_sde_det(score, sched, &x, t, label, guidance, ctx)?;
                let noise = sched.diffusion(t) * dt.abs().sqrt();
                for (xi, fi) in x.iter_mut().zip(&f) {
                    *xi += fi * dt + noise * normal(&mut ctx.rng);
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: k + 1,
                lab_time: (k + 1) as f64 * dt_lab,
            });
        }
        if (k + 1) % config.record_stride == 0 || k + 1 == steps {
            times.push((k + 1) as f64 * dt_lab);
            alg_times.push(t_next);
            states.push(x.clone());
        }
    }
    let saturations = ctx.saturations - sat_before;
    if saturations > 0 {
        log::debug!("analog clamps engaged {saturations} times during integration");
    }
    Ok(Trajectory {
        times,
        alg_times,
        states,
        label,
        final_state: x,
        saturations,
    })
}

/// Runs sample `index` of a batch: the initial state and all noise come from
/// stream `index` of the solver seed.
pub fn sample_one<S: ScoreFn + ?Sized>(
    score: &S,
    sched: &VPSchedule,
    config: &SolverConfig,
    index: usize,
    label: Option<usize>,
    guidance: Option<&GuidanceConfig>,
) -> Result<Trajectory> {
    let mut ctx = EvalCtx::new(stream(config.seed, index as u64));
    let x0 = sample_initial(score.dim(), &mut ctx.rng);
    integrate(score, sched, config, &x0, label, guidance, &mut ctx)
}

/// Independent trajectories for sample indices `0..count`, integrated in
/// parallel. Results do not depend on thread scheduling.
pub fn batch_trajectories<S: ScoreFn + ?Sized>(
    score: &S,
    sched: &VPSchedule,
    config: &SolverConfig,
    count: usize,
    label: Option<usize>,
    guidance: Option<&GuidanceConfig>,
) -> Result<Vec<Trajectory>> {
    if count == 0 {
        return Err(Error::Config("batch count must be >= 1".into()));
    }
    config.validate()?;
    let results: Vec<Result<Trajectory>> = (0..count)
        .into_par_iter()
        .map(|i| sample_one(score, sched, config, i, label, guidance))
        .collect();
    let mut ok = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => ok.push(t),
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    if failures.is_empty() {
        Ok(ok)
    } else {
        Err(Error::Batch { total: count, failures })
    }
}

/// Final states of [`batch_trajectories`].
pub fn batch_sample<S: ScoreFn + ?Sized>(
    score: &S,
    sched: &VPSchedule,
    config: &SolverConfig,
    count: usize,
    label: Option<usize>,
    guidance: Option<&GuidanceConfig>,
) -> Result<Vec<Vec<f64>>> {
    let quiet = SolverConfig {
        record_stride: usize::MAX,
        ..config.clone()
    };
    Ok(batch_trajectories(score, sched, &quiet, count, label, guidance)?
        .into_iter()
        .map(|t| t.final_state)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::from_seed;
    use crate::sde::{GaussianScore, ZeroScore};

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig {
            method: Method::EulerMaruyama,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            mode: Mode::Sde,
            method: Method::Rk4,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            dt_lab: 0.3,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(SolverConfig::default().steps().unwrap(), 1000);
    }

    #[test]
    fn zero_score_matches_linear_ode() {
        let sched = VPSchedule::default();
        let cfg = SolverConfig {
            dt_lab: 1e-4,
            ..SolverConfig::default()
        };
        let x0 = [0.8, -1.7];
        let traj = integrate(&ZeroScore(2), &sched, &cfg, &x0, None, None, &mut EvalCtx::new(from_seed(0))).unwrap();
        // dx/dt = -beta/2 x from T down to t_min: x = x0 exp((B(T) - B(t_min)) / 2)
        let factor = (0.5 * (sched.integrated_beta(1.0) - sched.integrated_beta(cfg.t_min))).exp();
        for (x, x0) in traj.final_state.iter().zip(&x0) {
            let exact = x0 * factor;
            assert!((x - exact).abs() / exact.abs() < 1e-3);
        }
    }

    #[test]
    fn time_axis_is_mapped_and_monotone() {
        let sched = VPSchedule::default();
        let cfg = SolverConfig {
            record_stride: 1,
            ..SolverConfig::default()
        };
        let traj = integrate(&ZeroScore(2), &sched, &cfg, &[0.1, 0.2], None, None, &mut EvalCtx::new(from_seed(0))).unwrap();
        assert_eq!(traj.times[0], 0.0);
        assert!((traj.times.last().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(traj.alg_times[0], 1.0);
        assert_eq!(*traj.alg_times.last().unwrap(), cfg.t_min);
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        assert!(traj.alg_times.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(traj.states[0], vec![0.1, 0.2]);
        assert_eq!(traj.states.len(), 1001);
    }

    #[test]
    fn ode_runs_are_bit_identical() {
        let g = GaussianScore {
            sched: VPSchedule::default(),
            mean: vec![1.0, 0.0],
            std: 0.2,
        };
        let cfg = SolverConfig::ode(Method::Rk4);
        let a = batch_trajectories(&g, &g.sched, &cfg, 8, None, None).unwrap();
        let b = batch_trajectories(&g, &g.sched, &cfg, 8, None, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batch_of_one_matches_direct_integration() {
        let g = GaussianScore {
            sched: VPSchedule::default(),
            mean: vec![0.5, -0.5],
            std: 0.3,
        };
        let cfg = SolverConfig::sde();
        let batch = batch_sample(&g, &g.sched, &cfg, 1, None, None).unwrap();
        let mut ctx = EvalCtx::new(stream(cfg.seed, 0));
        let x0 = sample_initial(2, &mut ctx.rng);
        let direct = integrate(&g, &g.sched, &cfg, &x0, None, None, &mut ctx).unwrap();
        assert_eq!(batch[0], direct.final_state);
    }

    #[test]
    fn divergence_reports_step() {
        struct Blowup;
        impl ScoreFn for Blowup {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, x: &[f64], _t: f64, _l: Option<usize>, _c: &mut EvalCtx) -> Result<Vec<f64>> {
                Ok(vec![x[0] * 1e300])
            }
        }
        let err = integrate(
            &Blowup,
            &VPSchedule::default(),
            &SolverConfig::default(),
            &[1.0],
            None,
            None,
            &mut EvalCtx::new(from_seed(0)),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { step, .. } if step >= 1));
        assert!(integrate(
            &ZeroScore(1),
            &VPSchedule::default(),
            &SolverConfig::default(),
            &[f64::NAN],
            None,
            None,
            &mut EvalCtx::new(from_seed(0))
        )
        .is_err());
    }

    #[test]
    fn initial_samples_are_standard_normal() {
        let mut rng = from_seed(99);
        let n = 100_000;
        let mut sum = [0.0; 2];
        let mut cov = [[0.0; 2]; 2];
        for _ in 0..n {
            let x = sample_initial(2, &mut rng);
            for i in 0..2 {
                sum[i] += x[i];
                for j in 0..2 {
                    cov[i][j] += x[i] * x[j];
                }
            }
        }
        let nf = n as f64;
        for i in 0..2 {
            assert!((sum[i] / nf).abs() < 3.0 / nf.sqrt());
            for j in 0..2 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((cov[i][j] / nf - target).abs() < 0.015);
            }
        }
        assert_eq!(sample_initial(3, &mut from_seed(1)), sample_initial(3, &mut from_seed(1)));
    }
}
