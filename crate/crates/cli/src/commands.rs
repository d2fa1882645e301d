// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde_json::json;

use memdiff::config::{DataSource, Experiment, RunConfig};
use memdiff::data::LETTERS;
use memdiff::eval::{histogram_kl, nearest_center_accuracy};
use memdiff::experiment::{
    deploy_score, latent_codes, letter_trajectories, letters_data, load_model, ring_reference, ring_sweep,
    save_model, solver_with, train_letters, train_ring, LettersModel,
};
use memdiff::export::{
    heatmap_svg, read_points_csv, scatter_svg, snapshot, write_images_csv, write_pgm, write_points_csv,
    write_trajectories_csv, Bounds,
};
use memdiff::latent::{decode, AnalogDecoder, DecodeMode, IMAGE_SIDE};
use memdiff::rng::{derive_seed, from_seed, stream};
use memdiff::sde::{EvalCtx, ScoreFn};
use memdiff::solver::{batch_trajectories, integrate, Mode, Trajectory};
use memdiff::training::mlp::ScoreNet;

use crate::{Common, DeployArgs, EvalArgs, ExperimentArg, ModeArg, SampleArgs, SweepArgs};

const CONFIG_FILE: &str = "run_config.json";
const MODEL_FILE: &str = "model.json";
/// Decoded images written as PGM per class.
const PGM_PER_CLASS: usize = 16;

/// Loads or builds the run configuration and applies the flag overrides.
fn resolve(c: &Common) -> Result<RunConfig> {
    let base = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::for_experiment(match c.experiment {
            ExperimentArg::Ring => Experiment::Ring,
            ExperimentArg::Letters => Experiment::Letters,
        }),
    };
    let mut cfg = base.with_overrides(&c.overrides)?;
    if c.synthetic {
        cfg.data.source = DataSource::Synthetic;
    }
    if let Some(d) = &c.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Creates `dir` and stores the resolved config in it.
fn artifact_dir(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    Ok(())
}

fn model_path(cfg: &RunConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| cfg.output_dir.join(MODEL_FILE))
}

fn mode_of(m: ModeArg) -> Mode {
    match m {
        ModeArg::Ode => Mode::Ode,
        ModeArg::Sde => Mode::Sde,
    }
}

fn write_losses(path: &Path, losses: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "loss"])?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn tail_mean(v: &[f64]) -> f64 {
    let tail = &v[v.len().saturating_sub(500)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

pub fn train(c: &Common) -> Result<()> {
    let cfg = resolve(c)?;
    let out = cfg.output_dir.clone();
    artifact_dir(&cfg, &out)?;
    match cfg.experiment {
        Experiment::Ring => {
            info!("training ring score net ({} steps)", cfg.training.steps);
            let tr = train_ring(&cfg)?;
            save_model(&out.join(MODEL_FILE), &tr.net)?;
            write_losses(&out.join("losses.csv"), &tr.losses)?;
            info!("final loss (mean of last 500 steps) {:.4}", tail_mean(&tr.losses));
        }
        Experiment::Letters => {
            let ds = letters_data(&cfg)?;
            info!("training VAE and conditional score net on {} images", ds.len());
            let tl = train_letters(&cfg, &ds)?;
            save_model(&out.join(MODEL_FILE), &tl.model)?;
            write_losses(&out.join("vae_losses.csv"), &tl.vae_losses)?;
            write_losses(&out.join("score_losses.csv"), &tl.score_losses)?;
            info!(
                "final losses: vae {:.4}, score {:.4}",
                tail_mean(&tl.vae_losses),
                tail_mean(&tl.score_losses)
            );
        }
    }
    info!("wrote {}", out.join(MODEL_FILE).display());
    Ok(())
}

/// Runs the batch, logging every failed sample before giving up.
fn reported<T>(r: memdiff::Result<T>) -> Result<T> {
    if let Err(memdiff::Error::Batch { failures, .. }) = &r {
        for (i, msg) in failures {
            warn!("sample {i}: {msg}");
        }
    }
    Ok(r?)
}

fn ring_trajectories<S: ScoreFn>(score: &S, cfg: &RunConfig, count: usize, init: Option<&[f64]>) -> Result<Vec<Trajectory>> {
    match init {
        Some(x) => {
            let mut ctx = EvalCtx::new(stream(cfg.solver.seed, 0));
            Ok(vec![integrate(score, &cfg.schedule, &cfg.solver, x, None, None, &mut ctx)?])
        }
        None => reported(batch_trajectories(score, &cfg.schedule, &cfg.solver, count, None, None)),
    }
}

fn parse_label(s: &str) -> Result<usize> {
    if let Ok(i) = s.parse::<usize>() {
        if i < LETTERS.len() {
            return Ok(i);
        }
    }
    let up = s.to_ascii_uppercase();
    LETTERS
        .iter()
        .position(|l| up.len() == 1 && up.starts_with(*l))
        .ok_or_else(|| memdiff::Error::Config(format!("unknown label `{s}`; use one of H, K, U or 0..2")).into())
}

fn write_snapshots(out: &Path, cfg: &RunConfig, groups: &[(String, Vec<Trajectory>)]) -> Result<()> {
    for &t in &cfg.snapshot_times {
        let tag = format!("{t:.3}");
        let pts: Vec<(String, Vec<Vec<f64>>)> = groups.iter().map(|(n, tr)| (n.clone(), snapshot(tr, t))).collect();
        let flat: Vec<Vec<f64>> = pts.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
        write_points_csv(&out.join(format!("snapshot_t{tag}.csv")), &flat, None)?;
        scatter_svg(
            &out.join(format!("snapshot_t{tag}.svg")),
            &format!("lab time {tag} s"),
            &pts,
            Bounds::square(3.0),
        )?;
    }
    Ok(())
}

pub fn sample(a: &SampleArgs) -> Result<()> {
    let mut cfg = resolve(&a.common)?;
    if let Some(m) = a.mode {
        cfg.solver = solver_with(&cfg.solver, Some(mode_of(m)), cfg.solver.seed);
    }
    if let Some(n) = a.count {
        cfg.count = n;
    }
    cfg.validate()?;
    if let Some(x) = &a.init {
        if x.len() != 2 {
            bail!(memdiff::Error::Config(format!("--init needs 2 coordinates, got {}", x.len())));
        }
    }
    let model = model_path(&cfg, &a.model);
    let out = cfg.output_dir.join("sample");
    artifact_dir(&cfg, &out)?;
    let init = a.init.as_deref();
    match cfg.experiment {
        Experiment::Ring => {
            if a.label.is_some() {
                bail!(memdiff::Error::Config("--label applies to the letters experiment".into()));
            }
            let net: ScoreNet = load_model(&model)?;
            let trajs = if a.digital {
                ring_trajectories(&net, &cfg, cfg.count, init)?
            } else {
                let analog = deploy_score(&net, &cfg, &cfg.device, cfg.seeds.deploy)?;
                ring_trajectories(&analog, &cfg, cfg.count, init)?
            };
            let ends: Vec<Vec<f64>> = trajs.iter().map(|t| t.final_state.clone()).collect();
            write_points_csv(&out.join("endpoints.csv"), &ends, None)?;
            write_trajectories_csv(&out.join("trajectories.csv"), &trajs)?;
            scatter_svg(&out.join("scatter.svg"), "ring samples", &[("samples".into(), ends.clone())], Bounds::square(2.0))?;
            write_snapshots(&out, &cfg, &[("samples".into(), trajs.clone())])?;
            let kl = histogram_kl(&ring_reference(&cfg)?, &ends, &cfg.kl)?;
            let sat: u64 = trajs.iter().map(|t| t.saturations).sum();
            info!("{} samples, KL to ground truth {kl:.4}, clamp engagements {sat}", ends.len());
        }
        Experiment::Letters => {
            let m: LettersModel = load_model(&model)?;
            let classes: Vec<usize> = match &a.label {
                Some(l) => vec![parse_label(l)?],
                None => (0..cfg.latent.classes()).collect(),
            };
            let analog = if a.digital {
                None
            } else {
                let score = deploy_score(&m.score, &cfg, &cfg.device, cfg.seeds.deploy)?;
                let dec = AnalogDecoder::deploy(
                    &m.vae.decoder,
                    &cfg.device,
                    cfg.clamp,
                    cfg.unit_volt,
                    &mut from_seed(cfg.seeds.decoder_deploy),
                )?;
                Some((score, dec))
            };
            let mut groups = Vec::new();
            let mut ends = Vec::new();
            let mut labels = Vec::new();
            let mut images = Vec::new();
            for &class in &classes {
                let trajs = match &analog {
                    Some((s, _)) => reported(letter_trajectories(s, &cfg, class, cfg.count, init))?,
                    None => reported(letter_trajectories(&m.score, &cfg, class, cfg.count, init))?,
                };
                let mut rng = from_seed(derive_seed(cfg.seeds.decode, class as u64));
                let letter = LETTERS[class];
                for (i, t) in trajs.iter().enumerate() {
                    let mode = match &analog {
                        Some((_, d)) => DecodeMode::Analog(d, &mut rng),
                        None => DecodeMode::Digital,
                    };
                    let img = decode(&m.vae.decoder, &t.final_state, mode)?;
                    if i < PGM_PER_CLASS {
                        write_pgm(&out.join("images").join(format!("{letter}_{i:03}.pgm")), &img, IMAGE_SIDE)?;
                    }
                    ends.push(t.final_state.clone());
                    labels.push(class);
                    images.push(img);
                }
                groups.push((letter.to_string(), trajs));
            }
            write_points_csv(&out.join("endpoints.csv"), &ends, Some(&labels))?;
            write_images_csv(&out.join("images.csv"), &images)?;
            let all: Vec<Trajectory> = groups.iter().flat_map(|(_, t)| t.iter().cloned()).collect();
            write_trajectories_csv(&out.join("trajectories.csv"), &all)?;
            let scatter: Vec<(String, Vec<Vec<f64>>)> = groups
                .iter()
                .map(|(n, t)| (n.clone(), t.iter().map(|t| t.final_state.clone()).collect()))
                .collect();
            scatter_svg(&out.join("scatter.svg"), "latent samples", &scatter, Bounds::square(3.0))?;
            write_snapshots(&out, &cfg, &groups)?;
            for (class, (name, _)) in classes.iter().zip(&groups) {
                let pts: Vec<Vec<f64>> =
                    ends.iter().zip(&labels).filter(|(_, l)| *l == class).map(|(p, _)| p.clone()).collect();
                let acc = nearest_center_accuracy(&pts, &vec![*class; pts.len()], &cfg.latent.centers)?;
                info!("{name}: {} samples, nearest-center accuracy {acc:.3}", pts.len());
            }
        }
    }
    info!("wrote {}", out.display());
    Ok(())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    if cfg.experiment != Experiment::Ring {
        bail!(memdiff::Error::Config("sweep runs on the ring experiment".into()));
    }
    let net: ScoreNet = load_model(&model_path(&cfg, &a.model))?;
    let out = cfg.output_dir.join("sweep");
    artifact_dir(&cfg, &out)?;
    let modes: Vec<Mode> = match a.mode {
        Some(m) => vec![mode_of(m)],
        None => cfg.sweep.modes.clone(),
    };
    for mode in modes {
        let name = match mode {
            Mode::Ode => "ode",
            Mode::Sde => "sde",
        };
        info!(
            "{name}: {}x{} grid, {} repeats",
            cfg.sweep.write_levels.len(),
            cfg.sweep.read_levels.len(),
            cfg.sweep.repeats
        );
        let grid = ring_sweep(&net, &cfg, mode)?;
        for f in &grid.failures {
            warn!("{name}: {f}");
        }
        grid.write_csv(&out.join(format!("sweep_{name}.csv")))?;
        heatmap_svg(&out.join(format!("heatmap_{name}.svg")), &grid)?;
    }
    info!("wrote {}", out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let (samples, labels) = read_points_csv(&a.samples)?;
    let reference = match &a.reference {
        Some(p) => Some(read_points_csv(p)?.0),
        None => match cfg.experiment {
            Experiment::Ring => Some(ring_reference(&cfg)?),
            Experiment::Letters => {
                let path = model_path(&cfg, &a.model);
                if path.exists() {
                    let m: LettersModel = load_model(&path)?;
                    let ds = letters_data(&cfg)?;
                    let (codes, _) = latent_codes(&m.vae, &ds, 0, 0)?;
                    Some(codes.rows().into_iter().map(|r| r.to_vec()).collect())
                } else {
                    warn!("no model at {}; skipping latent KL", path.display());
                    None
                }
            }
        },
    };
    let kl = reference.map(|r| histogram_kl(&r, &samples, &cfg.kl)).transpose()?;
    let mut metrics = json!({ "samples": samples.len(), "kl": kl });
    if cfg.experiment == Experiment::Letters {
        let labels = labels.ok_or_else(|| {
            memdiff::Error::format(a.samples.display().to_string(), "letters samples need a label column")
        })?;
        let mut per_class = serde_json::Map::new();
        for (k, letter) in LETTERS.iter().enumerate().take(cfg.latent.classes()) {
            let pts: Vec<Vec<f64>> =
                samples.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(p, _)| p.clone()).collect();
            if !pts.is_empty() {
                let acc = nearest_center_accuracy(&pts, &vec![k; pts.len()], &cfg.latent.centers)?;
                per_class.insert(letter.to_string(), json!(acc));
            }
        }
        metrics["latent_accuracy"] = json!(nearest_center_accuracy(&samples, &labels, &cfg.latent.centers)?);
        metrics["latent_accuracy_per_class"] = serde_json::Value::Object(per_class);
    }
    let out = cfg.output_dir.join("eval");
    artifact_dir(&cfg, &out)?;
    let text = serde_json::to_string_pretty(&metrics)?;
    std::fs::write(out.join("metrics.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

pub fn deploy_export(a: &DeployArgs) -> Result<()> {
    let cfg = resolve(&a.common)?;
    let path = model_path(&cfg, &a.model);
    let out = cfg.output_dir.join("deploy");
    artifact_dir(&cfg, &out)?;
    let score = match cfg.experiment {
        Experiment::Ring => load_model::<ScoreNet>(&path)?,
        Experiment::Letters => {
            let m: LettersModel = load_model(&path)?;
            let dec = AnalogDecoder::deploy(
                &m.vae.decoder,
                &cfg.device,
                cfg.clamp,
                cfg.unit_volt,
                &mut from_seed(cfg.seeds.decoder_deploy),
            )?;
            dec.net.export(&out.join("decoder"))?;
            m.score
        }
    };
    deploy_score(&score, &cfg, &cfg.device, cfg.seeds.deploy)?.mlp.export(&out.join("score"))?;
    info!("wrote {}", out.display());
    Ok(())
}
