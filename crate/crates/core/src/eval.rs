// SPDX-License-Identifier: Apache-2.0

//! Histogram KL divergence, class accuracy and noise sweeps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::DeviceConfig;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::solver::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KlConfig {
    pub bins_per_axis: usize,
    /// Box `[lo[0], hi[0]] x [lo[1], hi[1]]`.
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    /// Added to every normalized bin probability before renormalizing.
    pub pseudocount: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        Self {
            bins_per_axis: 50,
            lo: [-2.0, -2.0],
            hi: [2.0, 2.0],
            pseudocount: 1e-6,
        }
    }
}

impl KlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins_per_axis < 10 {
            return Err(Error::Config("kl: bins_per_axis must be >= 10".into()));
        }
        if !(self.pseudocount > 0.0) {
            return Err(Error::Config("kl: pseudocount must be positive".into()));
        }
        if !(self.lo[0] < self.hi[0] && self.lo[1] < self.hi[1]) {
            return Err(Error::Config("kl: empty domain".into()));
        }
        Ok(())
    }

    fn bin(&self, v: f64, axis: usize) -> usize {
        let n = self.bins_per_axis;
        let f = (v - self.lo[axis]) / (self.hi[axis] - self.lo[axis]);
        if f.is_nan() {
            return 0;
        }
        ((f * n as f64).floor().max(0.0) as usize).min(n - 1)
    }

    /// Smoothed bin probabilities; out-of-domain points land in edge bins.
    pub fn histogram(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Err(Error::Empty("kl samples"));
        }
        let n = self.bins_per_axis;
        let mut counts = vec![0.0; n * n];
        for s in samples {
            if s.len() != 2 {
                return Err(Error::Dimension {
                    context: "kl sample",
                    expected: 2,
                    got: s.len(),
                });
            }
            counts[self.bin(s[0], 0) * n + self.bin(s[1], 1)] += 1.0;
        }
        let total = samples.len() as f64;
        let norm = 1.0 + self.pseudocount * (n * n) as f64;
        Ok(counts.into_iter().map(|c| (c / total + self.pseudocount) / norm).collect())
    }
}

/// `sum P log(P / Q)` in nats over the smoothed 2-D histograms.
pub fn histogram_kl(p_samples: &[Vec<f64>], q_samples: &[Vec<f64>], config: &KlConfig) -> Result<f64> {
    config.validate()?;
    let p = config.histogram(p_samples)?;
    let q = config.histogram(q_samples)?;
    Ok(p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0))
}

/// Fraction of samples whose nearest centre is their label. Labels without
/// a centre count as misses.
pub fn nearest_center_accuracy(samples: &[Vec<f64>], labels: &[usize], centers: &[[f64; 2]]) -> Result<f64> {
    if samples.len() != labels.len() {
        return Err(Error::Dimension {
            context: "accuracy labels",
            expected: samples.len(),
            got: labels.len(),
        });
    }
    if samples.is_empty() {
        return Err(Error::Empty("accuracy samples"));
    }
    let hits = samples
        .iter()
        .zip(labels)
        .filter(|(s, &l)| nearest_index(s, centers.iter().map(|c| c.as_slice())) == Some(l))
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Index of the nearest reference vector by squared distance.
pub fn nearest_index<'a>(x: &[f64], refs: impl Iterator<Item = &'a [f64]>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, r) in refs.enumerate() {
        let d: f64 = x.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((k, d));
        }
    }
    best.map(|b| b.0)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Device configuration for one sweep cell. `write` is the program-verify
/// tolerance as a fraction of the conductance window, `read` the read-noise
/// std as a fraction of `g_fixed`. Zero disables the respective noise.
pub fn noise_levels(base: &DeviceConfig, write: f64, read: f64) -> DeviceConfig {
    let mut cfg = base.clone();
    if write > 0.0 {
        let tol = write * (base.g_max - base.g_min);
        cfg.ideal_write = false;
        cfg.write_tol = tol;
        cfg.write_step_mean = tol;
        cfg.write_step_sigma = 0.5 * tol;
    } else {
        cfg.ideal_write = true;
    }
    cfg.read_noise_a = read * base.g_fixed;
    cfg.read_noise_b = 0.0;
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepGrid {
    pub write_sigmas: Vec<f64>,
    pub read_sigmas: Vec<f64>,
    pub mode: Mode,
    pub repeats: usize,
    /// `[write][read][repeat]`; `None` marks a failed run.
    pub runs: Vec<Vec<Vec<Option<f64>>>>,
    pub failures: Vec<String>,
}

impl NoiseSweepGrid {
    /// Mean KL over successful repeats, `[write][read]`.
    pub fn kl_results(&self) -> Vec<Vec<Option<f64>>> {
        self.runs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|reps| {
                        let ok: Vec<f64> = reps.iter().flatten().copied().collect();
                        (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
                    })
                    .collect()
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["write_sigma", "read_sigma", "mode", "repeat", "kl"])?;
        let mode = match self.mode {
            Mode::Ode => "ode",
            Mode::Sde => "sde",
        };
        for (i, ws) in self.write_sigmas.iter().enumerate() {
            for (j, rs) in self.read_sigmas.iter().enumerate() {
                for (r, kl) in self.runs[i][j].iter().enumerate() {
                    let kl = kl.map_or_else(|| "nan".to_string(), |v| v.to_string());
                    w.write_record([ws.to_string(), rs.to_string(), mode.to_string(), r.to_string(), kl])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `cell(device, mode, seed)` for every grid cell and repeat, in
/// parallel, with seeds derived from `master_seed`, the cell and the repeat.
/// Failed runs are recorded, not fatal.
pub fn noise_sweep<F>(
    write_sigmas: &[f64],
    read_sigmas: &[f64],
    mode: Mode,
    repeats: usize,
    base: &DeviceConfig,
    master_seed: u64,
    cell: F,
) -> Result<NoiseSweepGrid>
where
    F: Fn(&DeviceConfig, Mode, u64) -> Result<f64> + Sync,
{
    if write_sigmas.is_empty() || read_sigmas.is_empty() || repeats == 0 {
        return Err(Error::Config("sweep: need at least one level per axis and one repeat".into()));
    }
    if write_sigmas.iter().chain(read_sigmas).any(|v| !(*v >= 0.0)) {
        return Err(Error::Config("sweep: noise levels must be non-negative".into()));
    }
    let nr = read_sigmas.len();
    let jobs: Vec<(usize, usize, usize)> = (0..write_sigmas.len())
        .flat_map(|i| (0..nr).flat_map(move |j| (0..repeats).map(move |r| (i, j, r))))
        .collect();
    let results: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(i, j, r)| {
            let device = noise_levels(base, write_sigmas[i], read_sigmas[j]);
            // repeat r shares its seed across cells so cells differ only by noise level
            cell(&device, mode, derive_seed(master_seed, r as u64))
        })
        .collect();
    let mut runs = vec![vec![vec![None; repeats]; nr]; write_sigmas.len()];
    let mut failures = Vec::new();
    for (&(i, j, r), res) in jobs.iter().zip(results) {
        match res {
            Ok(kl) => runs[i][j][r] = Some(kl),
            Err(e) => {
                let msg = format!("write {} read {} repeat {r}: {e}", write_sigmas[i], read_sigmas[j]);
                log::warn!("sweep cell failed: {msg}");
                failures.push(msg);
            }
        }
    }
    Ok(NoiseSweepGrid {
        write_sigmas: write_sigmas.to_vec(),
        read_sigmas: read_sigmas.to_vec(),
        mode,
        repeats,
        runs,
        failures,
    })
}
