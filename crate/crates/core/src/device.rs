// SPDX-License-Identifier: Apache-2.0

//! Resistive-memory cells and crossbar arrays.
//!
//! A cell stores a conductance `G_mem` in `[g_min, g_max]`. Every cell is paired
//! with a shared fixed conductance `g_fixed`, so the signed weight a cell
//! contributes is `G_mem - g_fixed`. Writing follows an iterative
//! program-verify loop (write noise); reading adds a fresh Gaussian
//! fluctuation whose magnitude grows with the conductance (read noise).

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal, SimRng};

/// Device parameters. Conductances are in mS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub g_min: f64,
    pub g_max: f64,
    /// Shared negative conductance, 1/(20 kOhm).
    pub g_fixed: f64,
    pub write_tol: f64,
    pub write_step_mean: f64,
    pub write_step_sigma: f64,
    pub max_program_cycles: u32,
    pub read_noise_a: f64,
    pub read_noise_b: f64,
    pub quant_levels: Option<u32>,
    /// Skip program-verify and store targets exactly.
    pub ideal_write: bool,
    /// Give every output column its own conductance scale and TIA gain
    /// instead of one per layer.
    pub column_gain: bool,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            g_min: 0.02,
            g_max: 0.10,
            g_fixed: 0.05,
            write_tol: 0.001,
            write_step_mean: 0.002,
            write_step_sigma: 0.001,
            max_program_cycles: 1000,
            read_noise_a: 0.0002,
            read_noise_b: 0.005,
            quant_levels: None,
            ideal_write: false,
            column_gain: false,
        }
    }
}

impl DeviceConfig {
    /// Ideal writes and no read noise: the digital-twin configuration.
    pub fn noiseless() -> Self {
        Self {
            ideal_write: true,
            read_noise_a: 0.0,
            read_noise_b: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("device: {msg}")));
        if !(0.0 < self.g_min && self.g_min < self.g_fixed && self.g_fixed < self.g_max) {
            return bad("need 0 < g_min < g_fixed < g_max");
        }
        if !(self.write_tol >= 0.0) || !(self.write_step_sigma >= 0.0) {
            return bad("write_tol and write_step_sigma must be non-negative");
        }
        if !(self.write_step_mean > 0.0) {
            return bad("write_step_mean must be positive");
        }
        if self.read_sigma(self.g_min) < 0.0 || self.read_sigma(self.g_max) < 0.0 {
            return bad("read-noise std must be non-negative over [g_min, g_max]");
        }
        if let Some(levels) = self.quant_levels {
            if levels < 64 {
                return bad("quant_levels must be at least 64");
            }
        }
        Ok(())
    }

    /// Read-noise standard deviation at conductance `g`.
    pub fn read_sigma(&self, g: f64) -> f64 {
        self.read_noise_a + self.read_noise_b * g
    }

    pub fn has_read_noise(&self) -> bool {
        self.read_noise_a != 0.0 || self.read_noise_b != 0.0
    }

    /// Largest positive effective weight (mS).
    pub fn pos_headroom(&self) -> f64 {
        self.g_max - self.g_fixed
    }

    /// Magnitude of the most negative effective weight (mS).
    pub fn neg_headroom(&self) -> f64 {
        self.g_fixed - self.g_min
    }

    /// Snaps a conductance to the nearest of `quant_levels` evenly spaced states.
    pub fn quantize(&self, g: f64) -> f64 {
        match self.quant_levels {
            Some(levels) if levels >= 2 => {
                let step = (self.g_max - self.g_min) / f64::from(levels - 1);
                (self.g_min + ((g - self.g_min) / step).round() * step).clamp(self.g_min, self.g_max)
            }
            _ => g,
        }
    }
}

/// Maps a weight to a cell conductance: `clip(w * scale + g_fixed, g_min, g_max)`.
pub fn weight_to_conductance(w: f64, scale: f64, config: &DeviceConfig) -> Result<f64> {
    if !w.is_finite() {
        return Err(Error::NonFinite("weight"));
    }
    if !(scale > 0.0) {
        return Err(Error::Config(format!("conductance scale must be positive, got {scale}")));
    }
    Ok((w * scale + config.g_fixed).clamp(config.g_min, config.g_max))
}

/// Inverse of [`weight_to_conductance`] inside the representable range.
pub fn conductance_to_weight(g: f64, scale: f64, config: &DeviceConfig) -> f64 {
    (g - config.g_fixed) / scale
}

/// Programs one cell from a uniformly random starting conductance.
///
/// Returns the achieved conductance and the number of program-verify cycles.
pub fn program_cell(g_target: f64, rng: &mut SimRng, config: &DeviceConfig) -> Result<(f64, u32)> {
    check_target(g_target, config)?;
    let start = rng.random_range(config.g_min..=config.g_max);
    program_from(start, g_target, rng, config)
}

/// Program-verify loop starting at `g_start`. Cycle 1 is the initial write;
/// each verify that misses the tolerance band triggers one more pulse whose
/// magnitude is drawn from `N(write_step_mean, write_step_sigma^2)` and whose
/// direction points at the target.
pub fn program_from(
    g_start: f64,
    g_target: f64,
    rng: &mut SimRng,
    config: &DeviceConfig,
) -> Result<(f64, u32)> {
    let mut g = g_start;
    let mut best = g;
    for cycle in 1..=config.max_program_cycles {
        let err = g_target - g;
        if err.abs() <= config.write_tol {
            return Ok((g, cycle));
        }
        if err.abs() < (best - g_target).abs() {
            best = g;
        }
        let step = config.write_step_mean + config.write_step_sigma * normal(rng);
        g = (g + step * err.signum()).clamp(config.g_min, config.g_max);
    }
    if (g - g_target).abs() < (best - g_target).abs() {
        best = g;
    }
    Err(Error::Programming {
        cell: None,
        target: g_target,
        best,
        cycles: config.max_program_cycles,
    })
}

fn check_target(g: f64, config: &DeviceConfig) -> Result<()> {
    const SLACK: f64 = 1e-12;
    if !g.is_finite() || g < config.g_min - SLACK || g > config.g_max + SLACK {
        return Err(Error::Config(format!(
            "target conductance {g} mS outside [{}, {}]",
            config.g_min, config.g_max
        )));
    }
    Ok(())
}

/// A programmed crossbar. Rows take input voltages (bit lines), columns sum
/// currents (source lines). Immutable after programming.
#[derive(Debug, Clone)]
pub struct Crossbar {
    g_target: Array2<f64>,
    g_programmed: Array2<f64>,
    program_cycles: Array2<u32>,
    config: DeviceConfig,
}

impl Crossbar {
    /// Programs every cell (row-major order) with the program-verify loop.
    pub fn program(g_targets: &Array2<f64>, config: &DeviceConfig, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let (rows, cols) = g_targets.dim();
        let mut g_programmed = Array2::zeros((rows, cols));
        let mut program_cycles = Array2::zeros((rows, cols));
        for ((i, j), &target) in g_targets.indexed_iter() {
            check_target(target, config)?;
            let target = config.quantize(target);
            let (g, cycles) = if config.ideal_write {
                (target, 1)
            } else {
                program_cell(target, rng, config).map_err(|e| match e {
                    Error::Programming {
                        target,
                        best,
                        cycles,
                        ..
                    } => Error::Programming {
                        cell: Some((i, j)),
                        target,
                        best,
                        cycles,
                    },
                    other => other,
                })?
            };
            g_programmed[[i, j]] = g;
            program_cycles[[i, j]] = cycles;
        }
        Ok(Self {
            g_target: g_targets.clone(),
            g_programmed,
            program_cycles,
            config: config.clone(),
        })
    }

    /// Wraps conductances that were programmed elsewhere (e.g. loaded from CSV).
    pub fn from_programmed(g_programmed: Array2<f64>, config: &DeviceConfig) -> Result<Self> {
        config.validate()?;
        for &g in &g_programmed {
            check_target(g, config)?;
        }
        Ok(Self {
            g_target: g_programmed.clone(),
            program_cycles: Array2::zeros(g_programmed.dim()),
            g_programmed,
            config: config.clone(),
        })
    }

    pub fn rows(&self) -> usize {
        self.g_programmed.nrows()
    }

    pub fn cols(&self) -> usize {
        self.g_programmed.ncols()
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn g_target(&self) -> &Array2<f64> {
        &self.g_target
    }

    pub fn g_programmed(&self) -> &Array2<f64> {
        &self.g_programmed
    }

    pub fn program_cycles(&self) -> &Array2<u32> {
        &self.program_cycles
    }

    /// One noisy read of all effective weights `(g + eps) - g_fixed`, in mS.
    pub fn read_matrix(&self, rng: &mut SimRng) -> Array2<f64> {
        let cfg = &self.config;
        let noisy = cfg.has_read_noise();
        self.g_programmed.mapv(|g| {
            let eps = if noisy { cfg.read_sigma(g) * normal(rng) } else { 0.0 };
            g + eps - cfg.g_fixed
        })
    }

    /// Column currents (mA) for row voltages `v` (V), using a single read draw.
    ///
    /// Consumes random numbers in the same order as [`Crossbar::read_matrix`],
    /// so `matvec(v)` equals `read_matrix()^T v` for an identical stream.
    pub fn matvec(&self, v: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        if v.len() != self.rows() {
            return Err(Error::Dimension {
                context: "crossbar matvec",
                expected: self.rows(),
                got: v.len(),
            });
        }
        let cfg = &self.config;
        let noisy = cfg.has_read_noise();
        let mut out = vec![0.0; self.cols()];
        for (row, &vi) in self.g_programmed.rows().into_iter().zip(v) {
            for (acc, &g) in out.iter_mut().zip(row) {
                let eps = if noisy { cfg.read_sigma(g) * normal(rng) } else { 0.0 };
                *acc += (g + eps - cfg.g_fixed) * vi;
            }
        }
        Ok(out)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_matrix_csv(path, &self.g_programmed)
    }
}

/// Writes a matrix as plain CSV, one row per line.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|x| format!("{x:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for record in r.records() {
        let record = record?;
        if *cols.get_or_insert(record.len()) != record.len() {
            return Err(Error::format(path.display().to_string(), "ragged matrix rows"));
        }
        for field in &record {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path.display().to_string(), format!("bad number {field:?}")))?;
            data.push(x);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), data)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}
