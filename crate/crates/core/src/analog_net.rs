// SPDX-License-Identifier: Apache-2.0

//! Analog fully connected network built from crossbars.
//!
//! Each layer clamps its input voltages, drives them onto a crossbar, adds
//! bias currents (static bias plus the embedding injected at hidden layers),
//! converts the summed column current to a voltage with a transimpedance gain,
//! and optionally rectifies it. Software values map to volts through
//! `unit_volt` (0.1 V per unit).

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::device::{weight_to_conductance, Crossbar, DeviceConfig};
use crate::embedding::{self, ConditionEmbedding, TimeEmbedding};
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::sde::{EvalCtx, ScoreFn};
use crate::training::mlp::{DenseLayer, DigitalMLP, InputRange, ScoreNet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClampConfig {
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Default for ClampConfig {
    fn default() -> Self {
        Self { v_lo: -0.2, v_hi: 0.4 }
    }
}

impl ClampConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_lo < 0.0 && 0.0 < self.v_hi) {
            return Err(Error::Config("clamp: need v_lo < 0 < v_hi".into()));
        }
        Ok(())
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|x| x.clamp(self.v_lo, self.v_hi)).collect()
    }

    /// The same window expressed in software units.
    pub fn in_units(&self, unit_volt: f64) -> InputRange {
        InputRange {
            lo: self.v_lo / unit_volt,
            hi: self.v_hi / unit_volt,
        }
    }

    fn engaged(&self, v: &[f64]) -> u64 {
        v.iter().filter(|x| **x < self.v_lo || **x > self.v_hi).count() as u64
    }
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone)]
pub struct AnalogLayer {
    pub xbar: Crossbar,
    /// Conductance per unit digital weight (mS), one per output column.
    pub scale: Vec<f64>,
    /// Transimpedance gain (V/mA), one per output column.
    pub gain: Vec<f64>,
    pub activation: Activation,
    /// Static bias current (mA), one per output.
    pub bias_current: Vec<f64>,
    /// Whether the embedding is injected at this layer.
    pub embed_port: bool,
}

impl AnalogLayer {
    pub fn inputs(&self) -> usize {
        self.xbar.rows()
    }

    pub fn outputs(&self) -> usize {
        self.xbar.cols()
    }

    /// `activation(gain * (crossbar(clamp(x)) + bias_current))`. Returns the
    /// output voltages and the number of inputs the clamp engaged on.
    pub fn forward(
        &self,
        x: &[f64],
        bias_current: &[f64],
        clamp: &ClampConfig,
        rng: &mut SimRng,
        probe: &mut dyn FnMut(&[f64]),
    ) -> Result<(Vec<f64>, u64)> {
        if bias_current.len() != self.outputs() {
            return Err(Error::Dimension {
                context: "bias current",
                expected: self.outputs(),
                got: bias_current.len(),
            });
        }
        let clamped = clamp.apply(x);
        probe(&clamped);
        let currents = self.xbar.matvec(&clamped, rng)?;
        let y = currents
            .iter()
            .zip(bias_current)
            .zip(&self.gain)
            .map(|((i, b), g)| {
                let v = g * (i + b);
                match self.activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Identity => v,
                }
            })
            .collect();
        Ok((y, clamp.engaged(x)))
    }
}

/// Deployed analog MLP. Immutable after deployment.
#[derive(Debug, Clone)]
pub struct AnalogMLP {
    pub layers: Vec<AnalogLayer>,
    pub clamp: ClampConfig,
    pub unit_volt: f64,
}

/// Result of one analog forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub output: Vec<f64>,
    pub saturations: u64,
}

impl AnalogMLP {
    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, AnalogLayer::outputs)
    }

    /// Forward pass in software units. `embed` (time plus condition) is
    /// converted to bias currents at every layer with an embedding port.
    pub fn forward(&self, x: &[f64], embed: Option<&[f64]>, rng: &mut SimRng) -> Result<Forward> {
        self.forward_probed(x, embed, rng, &mut |_, _| {})
    }

    /// As [`AnalogMLP::forward`], reporting the voltage vector that reaches
    /// each crossbar to `probe(layer, volts)`.
    pub fn forward_probed(
        &self,
        x: &[f64],
        embed: Option<&[f64]>,
        rng: &mut SimRng,
        probe: &mut dyn FnMut(usize, &[f64]),
    ) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                context: "analog input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let u = self.unit_volt;
        let mut v: Vec<f64> = x.iter().map(|xi| xi * u).collect();
        let mut saturations = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut bias = layer.bias_current.clone();
            if layer.embed_port {
                if let Some(e) = embed {
                    if e.len() != bias.len() {
                        return Err(Error::Dimension {
                            context: "embedding port",
                            expected: bias.len(),
                            got: e.len(),
                        });
                    }
                    for ((b, ei), s) in bias.iter_mut().zip(e).zip(&layer.scale) {
                        *b += s * u * ei;
                    }
                }
            }
            let (out, sat) = layer.forward(&v, &bias, &self.clamp, rng, &mut |volts| probe(l, volts))?;
            saturations += sat;
            v = out;
        }
        Ok(Forward {
            output: v.iter().map(|vi| vi / u).collect(),
            saturations,
        })
    }

    pub fn manifest(&self) -> DeployManifest {
        DeployManifest {
            unit_volt: self.unit_volt,
            clamp: self.clamp,
            device: self.layers.first().map(|l| l.xbar.config().clone()).unwrap_or_default(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerManifest {
                    rows: l.inputs(),
                    cols: l.outputs(),
                    scale_ms_per_unit: l.scale.clone(),
                    gain_v_per_ma: l.gain.clone(),
                    activation: l.activation,
                    bias_current_ma: l.bias_current.clone(),
                    embed_port: l.embed_port,
                })
                .collect(),
        }
    }

    /// Writes `manifest.json` plus one conductance CSV per crossbar
    /// (`layer{i}_g_programmed.csv`, `layer{i}_g_target.csv`).
    pub fn export(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest())?)?;
        for (i, l) in self.layers.iter().enumerate() {
            l.xbar.write_csv(&dir.join(format!("layer{i}_g_programmed.csv")))?;
            crate::device::write_matrix_csv(&dir.join(format!("layer{i}_g_target.csv")), l.xbar.g_target())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeployManifest {
    pub unit_volt: f64,
    pub clamp: ClampConfig,
    pub device: DeviceConfig,
    pub layers: Vec<LayerManifest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub rows: usize,
    pub cols: usize,
    pub scale_ms_per_unit: Vec<f64>,
    pub gain_v_per_ma: Vec<f64>,
    pub activation: Activation,
    pub bias_current_ma: Vec<f64>,
    pub embed_port: bool,
}

/// Conductance per unit weight for one layer: the largest scale at which no
/// weight leaves the representable window `[g_min - g_fixed, g_max - g_fixed]`.
pub fn layer_scale(w: &Array2<f64>, config: &DeviceConfig) -> f64 {
    weights_scale(w.iter().copied(), config)
}

/// Per-output scales: [`layer_scale`] of each row of `w` (out x in) when
/// `config.column_gain` is set, otherwise the layer scale repeated.
pub fn column_scales(w: &Array2<f64>, config: &DeviceConfig) -> Vec<f64> {
    if config.column_gain {
        w.rows().into_iter().map(|r| weights_scale(r.iter().copied(), config)).collect()
    } else {
        vec![layer_scale(w, config); w.nrows()]
    }
}

fn weights_scale(w: impl Iterator<Item = f64> + Clone, config: &DeviceConfig) -> f64 {
    let max_pos = w.clone().fold(0.0f64, |m, v| m.max(v));
    let max_neg = w.fold(0.0f64, |m, v| m.max(-v));
    let mut scale = f64::INFINITY;
    if max_pos > 0.0 {
        scale = scale.min(config.pos_headroom() / max_pos);
    }
    if max_neg > 0.0 {
        scale = scale.min(config.neg_headroom() / max_neg);
    }
    if scale.is_finite() {
        scale
    } else {
        config.pos_headroom()
    }
}

/// Programs one dense layer (`w` is out x in) onto a crossbar (in x out).
pub fn deploy_layer(
    layer: &DenseLayer,
    activation: Activation,
    embed_port: bool,
    unit_volt: f64,
    config: &DeviceConfig,
    rng: &mut SimRng,
) -> Result<AnalogLayer> {
    let scale = column_scales(&layer.w, config);
    let mut targets = Array2::zeros((layer.inputs(), layer.outputs()));
    for ((o, i), &w) in layer.w.indexed_iter() {
        targets[[i, o]] = weight_to_conductance(w, scale[o], config)?;
    }
    let xbar = Crossbar::program(&targets, config, rng)?;
    Ok(AnalogLayer {
        xbar,
        gain: scale.iter().map(|s| 1.0 / s).collect(),
        bias_current: layer.b.iter().zip(&scale).map(|(b, s)| s * unit_volt * b).collect(),
        scale,
        activation,
        embed_port,
    })
}

/// Deploys a digital MLP onto crossbars. Hidden layers use ReLU and carry an
/// embedding port; the output layer is linear.
pub fn deploy(
    net: &DigitalMLP,
    config: &DeviceConfig,
    clamp: ClampConfig,
    unit_volt: f64,
    rng: &mut SimRng,
) -> Result<AnalogMLP> {
    net.validate()?;
    clamp.validate()?;
    if !(unit_volt > 0.0) {
        return Err(Error::Config("unit_volt must be positive".into()));
    }
    let last = net.layers.len() - 1;
    let layers = net
        .layers
        .iter()
        .enumerate()
        .map(|(l, layer)| {
            let hidden = l < last;
            let act = if hidden { Activation::Relu } else { Activation::Identity };
            deploy_layer(layer, act, hidden, unit_volt, config, rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AnalogMLP {
        layers,
        clamp,
        unit_volt,
    })
}

/// Score network running on simulated crossbars.
#[derive(Debug, Clone)]
pub struct AnalogScoreNet {
    pub mlp: AnalogMLP,
    pub time: TimeEmbedding,
    pub cond: Option<ConditionEmbedding>,
}

impl AnalogScoreNet {
    pub fn deploy(
        net: &ScoreNet,
        config: &DeviceConfig,
        clamp: ClampConfig,
        unit_volt: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        if net.mlp.input_range != clamp.in_units(unit_volt) {
            log::warn!("digital input range differs from the analog clamp window; outputs will diverge");
        }
        Ok(Self {
            mlp: deploy(&net.mlp, config, clamp, unit_volt, rng)?,
            time: net.time.clone(),
            cond: net.cond.clone(),
        })
    }
}

impl ScoreFn for AnalogScoreNet {
    fn dim(&self) -> usize {
        self.mlp.input_dim()
    }

    fn eval(&self, x: &[f64], t: f64, label: Option<usize>, ctx: &mut EvalCtx) -> Result<Vec<f64>> {
        let e = embedding::combined(&self.time, self.cond.as_ref(), t, label)?;
        let fwd = self.mlp.forward(x, Some(&e), &mut ctx.rng)?;
        ctx.saturations += fwd.saturations;
        Ok(fwd.output)
    }
}
