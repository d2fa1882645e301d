// SPDX-License-Identifier: Apache-2.0

//! Variance-preserving diffusion process and the reverse-time right-hand
//! sides used for sampling.
//!
//! With a linear schedule `beta(t) = beta0 + (beta1 - beta0) t / T` the forward
//! SDE is `dx = -1/2 beta(t) x dt + sqrt(beta(t)) dw`. Sampling integrates
//! either the reverse SDE, `dx/dt = f - g^2 s + g dw/dt`, or the
//! probability-flow ODE, `dx/dt = f - 1/2 g^2 s`, from `t = T` down to
//! `t_min`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VPSchedule {
    pub beta0: f64,
    pub beta1: f64,
    pub t_end: f64,
}

impl Default for VPSchedule {
    fn default() -> Self {
        Self {
            beta0: 0.001,
            beta1: 0.5,
            t_end: 1.0,
        }
    }
}

/// Forward-marginal coefficients: `x_t = mean_coef * x_0 + sigma * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub mean_coef: f64,
    pub sigma: f64,
}

impl VPSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta0 && self.beta0 < self.beta1) || !(self.t_end > 0.0) {
            return Err(Error::Config("schedule: need 0 < beta0 < beta1 and T > 0".into()));
        }
        Ok(())
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::TimeOutOfRange { t, t_end: self.t_end });
        }
        Ok(())
    }

    /// `beta(t)`, rejecting times outside `[0, T]`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.beta_at(t))
    }

    /// Unchecked `beta(t)` for hot loops.
    #[inline]
    pub fn beta_at(&self, t: f64) -> f64 {
        self.beta0 + (self.beta1 - self.beta0) * t / self.t_end
    }

    /// Forward drift `-1/2 beta(t) x`.
    pub fn drift(&self, x: &[f64], t: f64) -> Vec<f64> {
        let k = -0.5 * self.beta_at(t);
        x.iter().map(|v| k * v).collect()
    }

    /// Diffusion coefficient `g(t) = sqrt(beta(t))`.
    pub fn diffusion(&self, t: f64) -> f64 {
        self.beta_at(t).sqrt()
    }

    /// `B(t) = integral_0^t beta(s) ds`.
    pub fn integrated_beta(&self, t: f64) -> f64 {
        self.beta0 * t + (self.beta1 - self.beta0) * t * t / (2.0 * self.t_end)
    }

    pub fn marginal(&self, t: f64) -> Marginal {
        let b = self.integrated_beta(t);
        Marginal {
            mean_coef: (-0.5 * b).exp(),
            sigma: (-(-b).exp_m1()).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub lambda: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { lambda: 0.5 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("guidance lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Per-trajectory evaluation state: the random stream (read noise and
/// Wiener increments) and a count of analog clamp engagements.
#[derive(Debug)]
pub struct EvalCtx {
    pub rng: SimRng,
    pub saturations: u64,
}

impl EvalCtx {
    pub fn new(rng: SimRng) -> Self {
        Self { rng, saturations: 0 }
    }
}

/// Maps `(x, t, label)` to a score vector of the same dimension as `x`.
/// `label = None` is the unconditional (null-token) evaluation.
pub trait ScoreFn: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], t: f64, label: Option<usize>, ctx: &mut EvalCtx) -> Result<Vec<f64>>;
}

impl<S: ScoreFn + ?Sized> ScoreFn for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, x: &[f64], t: f64, label: Option<usize>, ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        (**self).eval(x, t, label, ctx)
    }
}

/// Classifier-free guided score `(1 + lambda) s(x, c, t) - lambda s(x, t)`.
pub fn cfg_score<S: ScoreFn + ?Sized>(
    score: &S,
    x: &[f64],
    t: f64,
    label: usize,
    guidance: &GuidanceConfig,
    ctx: &mut EvalCtx,
) -> Result<Vec<f64>> {
    let cond = score.eval(x, t, Some(label), ctx)?;
    if guidance.lambda == 0.0 {
        return Ok(cond);
    }
    let uncond = score.eval(x, t, None, ctx)?;
    let lam = guidance.lambda;
    Ok(cond.iter().zip(&uncond).map(|(c, u)| (1.0 + lam) * c - lam * u).collect())
}

fn resolved_score<S: ScoreFn + ?Sized>(
    score: &S,
    x: &[f64],
    t: f64,
    label: Option<usize>,
    guidance: Option<&GuidanceConfig>,
    ctx: &mut EvalCtx,
) -> Result<Vec<f64>> {
    match (label, guidance) {
        (Some(l), Some(g)) => cfg_score(score, x, t, l, g, ctx),
        (label, _) => score.eval(x, t, label, ctx),
    }
}

/// Probability-flow right-hand side `-1/2 beta x - 1/2 beta s`.
pub fn f_ode<S: ScoreFn + ?Sized>(
    score: &S,
    sched: &VPSchedule,
    x: &[f64],
    t: f64,
    label: Option<usize>,
    guidance: Option<&GuidanceConfig>,
    ctx: &mut EvalCtx,
) -> Result<Vec<f64>> {
    let s = resolved_score(score, x, t, label, guidance, ctx)?;
    let beta = sched.beta_at(t);
    Ok(x.iter().zip(&s).map(|(xi, si)| -0.5 * beta * xi - 0.5 * beta * si).collect())
}

/// Deterministic part of the reverse SDE, `-1/2 beta x - beta s`.
pub fn f_sde_det<S: ScoreFn + ?Sized>(
    score: &S,
    sched: &VPSchedule,
    x: &[f64],
    t: f64,
    label: Option<usize>,
    guidance: Option<&GuidanceConfig>,
    ctx: &mut EvalCtx,
) -> Result<Vec<f64>> {
    let s = resolved_score(score, x, t, label, guidance, ctx)?;
    let beta = sched.beta_at(t);
    Ok(x.iter().zip(&s).map(|(xi, si)| -0.5 * beta * xi - beta * si).collect())
}

/// Exact score of the diffused isotropic Gaussian `N(mean, std^2 I)`:
/// `p_t = N(m(t) mean, (m(t)^2 std^2 + sigma(t)^2) I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScore {
    pub sched: VPSchedule,
    pub mean: Vec<f64>,
    pub std: f64,
}

impl GaussianScore {
    pub fn variance(&self, t: f64) -> f64 {
        let m = self.sched.marginal(t);
        m.mean_coef.powi(2) * self.std.powi(2) + m.sigma.powi(2)
    }

    /// Closed-form probability-flow solution from `x_from` at `t_from` to `t_to`.
    pub fn ode_solution(&self, x_from: &[f64], t_from: f64, t_to: f64) -> Vec<f64> {
        let (m0, m1) = (self.sched.marginal(t_from).mean_coef, self.sched.marginal(t_to).mean_coef);
        let ratio = (self.variance(t_to) / self.variance(t_from)).sqrt();
        x_from
            .iter()
            .zip(&self.mean)
            .map(|(x, mu)| m1 * mu + (x - m0 * mu) * ratio)
            .collect()
    }
}

impl ScoreFn for GaussianScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn eval(&self, x: &[f64], t: f64, _label: Option<usize>, _ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        let m = self.sched.marginal(t).mean_coef;
        let var = self.variance(t);
        Ok(x.iter().zip(&self.mean).map(|(xi, mu)| -(xi - m * mu) / var).collect())
    }
}

/// The zero score field.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore(pub usize);

impl ScoreFn for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, x: &[f64], _t: f64, _label: Option<usize>, _ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
}

/// Euler-Maruyama simulation of the forward SDE from `x0` for `steps` steps of
/// size `dt`. Returns the state after each requested step index.
pub fn simulate_forward(
    sched: &VPSchedule,
    x0: &[f64],
    dt: f64,
    steps: usize,
    record: &[usize],
    rng: &mut SimRng,
) -> Vec<Vec<f64>> {
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(record.len());
    let sqrt_dt = dt.sqrt();
    for k in 0..steps {
        let t = k as f64 * dt;
        let beta = sched.beta_at(t);
        let g = beta.sqrt();
        for xi in &mut x {
            *xi += -0.5 * beta * *xi * dt + g * sqrt_dt * normal(rng);
        }
        if record.contains(&(k + 1)) {
            out.push(x.clone());
        }
    }
    out
}
