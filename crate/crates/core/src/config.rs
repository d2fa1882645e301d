// SPDX-License-Identifier: Apache-2.0

//! Complete, serializable description of one experiment run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analog_net::ClampConfig;
use crate::data::RingSpec;
use crate::device::DeviceConfig;
use crate::error::{Error, Result};
use crate::eval::KlConfig;
use crate::latent::LatentSpec;
use crate::sde::{GuidanceConfig, VPSchedule};
use crate::solver::{Mode, SolverConfig};
use crate::training::mlp::EmbeddingSeeds;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Ring,
    Letters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Emnist,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// EMNIST directory; falls back to `$MEMDIFF_DATA_DIR`, then `data/`.
    pub dir: Option<PathBuf>,
    /// Synthetic glyphs per class, or a cap on EMNIST images per class.
    pub per_class: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Emnist,
            dir: None,
            per_class: 1000,
        }
    }
}

/// Every seed a run consumes, by purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub embedding: EmbeddingSeeds,
    /// Crossbar programming of the score network.
    pub deploy: u64,
    /// Crossbar programming of the decoder.
    pub decoder_deploy: u64,
    /// Dataset generation (ring points, synthetic glyphs).
    pub data: u64,
    /// Ground-truth reference set for KL evaluation.
    pub reference: u64,
    /// Read noise during analog decoding.
    pub decode: u64,
    /// Master seed of noise sweeps.
    pub sweep: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            embedding: EmbeddingSeeds::default(),
            deploy: 101,
            decoder_deploy: 102,
            data: 103,
            reference: 104,
            decode: 105,
            sweep: 106,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub write_levels: Vec<f64>,
    pub read_levels: Vec<f64>,
    pub modes: Vec<Mode>,
    pub repeats: usize,
    /// Samples per sweep run.
    pub count: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            write_levels: vec![0.0, 0.005, 0.01, 0.02, 0.04],
            read_levels: vec![0.0, 0.005, 0.01, 0.02, 0.04],
            modes: vec![Mode::Ode, Mode::Sde],
            repeats: 5,
            count: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub device: DeviceConfig,
    pub clamp: ClampConfig,
    /// Volts per software unit.
    pub unit_volt: f64,
    pub schedule: VPSchedule,
    pub solver: SolverConfig,
    pub training: TrainConfig,
    pub vae_training: TrainConfig,
    /// Weight of the latent KL term.
    pub gamma: f64,
    /// Latent codes per training image for the score net; 0 uses the
    /// posterior means.
    pub posterior_draws: usize,
    pub guidance: GuidanceConfig,
    pub kl: KlConfig,
    pub ring: RingSpec,
    pub latent: LatentSpec,
    pub data: DataConfig,
    pub seeds: Seeds,
    pub sweep: SweepConfig,
    /// Samples drawn by `sample` (per class for letters).
    pub count: usize,
    /// Ground-truth points for KL evaluation.
    pub reference_count: usize,
    /// Lab times (s) at which `sample` writes distribution snapshots.
    pub snapshot_times: Vec<f64>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_experiment(Experiment::Ring)
    }
}

impl RunConfig {
    pub fn for_experiment(experiment: Experiment) -> Self {
        let letters = experiment == Experiment::Letters;
        Self {
            experiment,
            device: DeviceConfig::default(),
            clamp: ClampConfig::default(),
            unit_volt: 0.1,
            schedule: VPSchedule::default(),
            solver: if letters { SolverConfig::sde() } else { SolverConfig::default() },
            training: if letters {
                TrainConfig {
                    learning_rate: 0.1,
                    batch_size: 1024,
                    steps: 40_000,
                    lr_final_fraction: 0.01,
                    ..TrainConfig::default()
                }
            } else {
                TrainConfig {
                    learning_rate: 0.1,
                    steps: 60_000,
                    lr_final_fraction: 0.01,
                    ..TrainConfig::default()
                }
            },
            vae_training: TrainConfig {
                learning_rate: 0.02,
                batch_size: 64,
                steps: 3000,
                ..TrainConfig::default()
            },
            gamma: 0.5,
            posterior_draws: 0,
            guidance: GuidanceConfig::default(),
            kl: KlConfig::default(),
            ring: RingSpec::default(),
            latent: LatentSpec::default(),
            data: DataConfig::default(),
            seeds: Seeds::default(),
            sweep: SweepConfig::default(),
            count: if letters { 500 } else { 1000 },
            reference_count: 10_000,
            snapshot_times: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            output_dir: PathBuf::from(if letters { "runs/letters" } else { "runs/ring" }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        self.clamp.validate()?;
        self.schedule.validate()?;
        self.solver.validate()?;
        self.training.validate()?;
        self.vae_training.validate()?;
        self.guidance.validate()?;
        self.kl.validate()?;
        self.ring.validate()?;
        self.latent.validate()?;
        if !(self.unit_volt > 0.0) {
            return Err(Error::Config("unit_volt must be positive".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config("gamma must be >= 0".into()));
        }
        if self.count == 0 || self.reference_count == 0 {
            return Err(Error::Config("count and reference_count must be >= 1".into()));
        }
        if self.experiment == Experiment::Letters && self.training.p_uncond <= 0.0 && self.guidance.lambda > 0.0 {
            return Err(Error::Config("guided sampling needs training.p_uncond > 0".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingInput {
                path: path.to_path_buf(),
                hint: "config file not found".into(),
            },
            _ => e.into(),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Applies `key.path=value` overrides. Values parse as JSON when they
    /// can (numbers, booleans, arrays, null) and as strings otherwise.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut root;
            for part in key.split('.') {
                slot = match slot {
                    Value::Object(map) => {
                        let known = map.keys().cloned().collect::<Vec<_>>().join(", ");
                        map.get_mut(part).ok_or_else(|| {
                            Error::Config(format!("unknown config key `{key}` (no `{part}` among {known})"))
                        })?
                    }
                    _ => return Err(Error::Config(format!("config key `{key}` descends into a non-object"))),
                };
            }
            *slot = value;
        }
        serde_json::from_value(root).map_err(|e| Error::Config(format!("override rejected: {e}")))
    }
}
