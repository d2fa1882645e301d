// SPDX-License-Identifier: Apache-2.0

//! End-to-end recipes: ring generation and conditional latent letters.

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::path::Path;

use crate::analog_net::AnalogScoreNet;
use crate::config::{DataSource, RunConfig};
use crate::data::emnist::{self, EmnistSplit};
use crate::data::{ring_sampler, rows, synthetic_glyphs, ImageDataset};
use crate::device::DeviceConfig;
use crate::error::{Error, Result};
use crate::eval::{histogram_kl, nearest_center_accuracy, nearest_index, noise_sweep, NoiseSweepGrid};
use crate::latent::{decode, AnalogDecoder, DecodeMode, Vae};
use crate::rng::{derive_seed, from_seed, normal_vec, stream};
use crate::sde::EvalCtx;
use crate::sde::ScoreFn;
use crate::solver::{batch_sample, batch_trajectories, integrate, Mode, SolverConfig, Trajectory};
use crate::training::dsm::{train_score, TrainedScore};
use crate::training::mlp::ScoreNet;
use crate::training::vae::train_vae;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    format_version: u32,
    model: T,
}

pub fn save_model<T: Serialize>(path: &Path, model: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let v = Versioned {
        format_version: MODEL_FORMAT_VERSION,
        model,
    };
    std::fs::write(path, serde_json::to_string(&v)?)?;
    Ok(())
}

pub fn load_model<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput {
            path: path.to_path_buf(),
            hint: "run `memdiff train` with the same config first".into(),
        },
        _ => e.into(),
    })?;
    let v: Versioned<T> =
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if v.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::format(
            path.display().to_string(),
            format!("model format {} (expected {MODEL_FORMAT_VERSION})", v.format_version),
        ));
    }
    Ok(v.model)
}

/// Solver config with its seed (and optionally mode) replaced.
pub fn solver_with(cfg: &SolverConfig, mode: Option<Mode>, seed: u64) -> SolverConfig {
    let mut s = cfg.clone();
    if let Some(m) = mode {
        s.mode = m;
        s.method = match m {
            Mode::Ode if s.method == crate::solver::Method::EulerMaruyama => crate::solver::Method::Euler,
            Mode::Ode => s.method,
            Mode::Sde => crate::solver::Method::EulerMaruyama,
        };
    }
    s.seed = seed;
    s
}

pub fn deploy_score(net: &ScoreNet, cfg: &RunConfig, device: &DeviceConfig, seed: u64) -> Result<AnalogScoreNet> {
    AnalogScoreNet::deploy(net, device, cfg.clamp, cfg.unit_volt, &mut from_seed(seed))
}

// ---------------------------------------------------------------- ring

pub fn ring_training_data(cfg: &RunConfig) -> Result<Array2<f64>> {
    ring_sampler(&cfg.ring, &mut from_seed(cfg.seeds.data))
}

pub fn train_ring(cfg: &RunConfig) -> Result<TrainedScore> {
    let data = ring_training_data(cfg)?;
    train_score(&data, None, &cfg.schedule, &cfg.training, &cfg.seeds.embedding)
}

/// Ground-truth ring points for KL evaluation.
pub fn ring_reference(cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    let spec = crate::data::RingSpec {
        n: cfg.reference_count,
        ..cfg.ring.clone()
    };
    Ok(rows(&ring_sampler(&spec, &mut from_seed(cfg.seeds.reference))?))
}

/// Initial-distribution samples `N(0, I)` drawn exactly as the solver draws
/// its starting points.
pub fn initial_samples(n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n).map(|i| normal_vec(&mut stream(seed, i as u64), 2)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingReport {
    /// KL(reference || analog samples).
    pub kl_analog: f64,
    /// KL(reference || digital float samples).
    pub kl_digital: f64,
    /// KL(reference || initial Gaussian).
    pub kl_initial: f64,
    pub samples: usize,
}

/// Samples the ring with the analog net (deployed on `cfg.device`) and the
/// digital net, and scores both against the reference set.
pub fn evaluate_ring(net: &ScoreNet, cfg: &RunConfig) -> Result<RingReport> {
    let reference = ring_reference(cfg)?;
    let analog = deploy_score(net, cfg, &cfg.device, cfg.seeds.deploy)?;
    let a = batch_sample(&analog, &cfg.schedule, &cfg.solver, cfg.count, None, None)?;
    let d = batch_sample(net, &cfg.schedule, &cfg.solver, cfg.count, None, None)?;
    let init = initial_samples(cfg.count, cfg.solver.seed);
    Ok(RingReport {
        kl_analog: histogram_kl(&reference, &a, &cfg.kl)?,
        kl_digital: histogram_kl(&reference, &d, &cfg.kl)?,
        kl_initial: histogram_kl(&reference, &init, &cfg.kl)?,
        samples: cfg.count,
    })
}

/// Write/read noise sweep of the ring task in one solver mode.
pub fn ring_sweep(net: &ScoreNet, cfg: &RunConfig, mode: Mode) -> Result<NoiseSweepGrid> {
    let reference = ring_reference(cfg)?;
    let count = cfg.sweep.count;
    noise_sweep(
        &cfg.sweep.write_levels,
        &cfg.sweep.read_levels,
        mode,
        cfg.sweep.repeats,
        &cfg.device,
        cfg.seeds.sweep,
        |device, mode, seed| {
            let analog = deploy_score(net, cfg, device, derive_seed(seed, 0))?;
            let solver = solver_with(&cfg.solver, Some(mode), derive_seed(seed, 1));
            let s = batch_sample(&analog, &cfg.schedule, &solver, count, None, None)?;
            histogram_kl(&reference, &s, &cfg.kl)
        },
    )
}

// ---------------------------------------------------------------- letters

/// The letter images selected by `cfg.data`.
pub fn letters_data(cfg: &RunConfig) -> Result<ImageDataset> {
    let ds = match cfg.data.source {
        DataSource::Synthetic => synthetic_glyphs(cfg.data.per_class, &mut from_seed(cfg.seeds.data)),
        DataSource::Emnist => {
            let dir = emnist::data_dir(cfg.data.dir.as_deref());
            let raw = emnist::load_emnist(&dir, EmnistSplit::Train)?;
            emnist::letters_dataset(&raw, true)?.truncate_per_class(cfg.data.per_class)
        }
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LettersModel {
    pub vae: Vae,
    pub score: ScoreNet,
}

#[derive(Debug, Clone)]
pub struct TrainedLetters {
    pub model: LettersModel,
    pub vae_losses: Vec<f64>,
    pub score_losses: Vec<f64>,
}

/// Posterior draws `mu + sigma * eps` of every image, `draws` per image;
/// `draws == 0` gives the posterior means instead.
pub fn latent_codes(vae: &Vae, ds: &ImageDataset, draws: usize, seed: u64) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut rng = from_seed(seed);
    let n = ds.len() * draws.max(1);
    let mut codes = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0;
    for (img, &l) in ds.images.iter().zip(&ds.labels) {
        let (mu, sigma) = vae.encoder.encode(img)?;
        if draws == 0 {
            codes[[row, 0]] = mu[0];
            codes[[row, 1]] = mu[1];
            labels.push(l);
            row += 1;
        }
        for _ in 0..draws {
            let z = crate::latent::reparameterize(&mu, &sigma, &mut rng);
            codes[[row, 0]] = z[0];
            codes[[row, 1]] = z[1];
            labels.push(l);
            row += 1;
        }
    }
    Ok((codes, labels))
}

/// Trains the VAE, encodes the dataset and trains the conditional score net
/// on the latent codes.
pub fn train_letters(cfg: &RunConfig, ds: &ImageDataset) -> Result<TrainedLetters> {
    let tv = train_vae(&ds.images, &ds.labels, cfg.gamma, &cfg.latent, &cfg.vae_training)?;
    let (codes, labels) = latent_codes(&tv.vae, ds, cfg.posterior_draws, derive_seed(cfg.seeds.data, 1))?;
    let ts = train_score(
        &codes,
        Some((&labels, cfg.latent.classes())),
        &cfg.schedule,
        &cfg.training,
        &cfg.seeds.embedding,
    )?;
    Ok(TrainedLetters {
        model: LettersModel {
            vae: tv.vae,
            score: ts.net,
        },
        vae_losses: tv.losses,
        score_losses: ts.losses,
    })
}

/// Nearest class-mean image classifier.
#[derive(Debug, Clone)]
pub struct MeanImageClassifier {
    pub means: Vec<Vec<f64>>,
}

impl MeanImageClassifier {
    pub fn fit(ds: &ImageDataset, classes: usize) -> Result<Self> {
        let means = ds
            .class_means(classes)
            .into_iter()
            .enumerate()
            .map(|(k, m)| m.ok_or_else(|| Error::Config(format!("no training images for class {k}"))))
            .collect::<Result<_>>()?;
        Ok(Self { means })
    }

    pub fn classify(&self, img: &[f64]) -> usize {
        nearest_index(img, self.means.iter().map(Vec::as_slice)).expect("at least one class")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LettersReport {
    pub per_class: usize,
    /// Fraction of latent endpoints nearest their own centre, per class.
    pub latent_accuracy: Vec<f64>,
    pub latent_accuracy_mean: f64,
    /// Fraction of decoded images nearest their own class-mean image.
    pub image_accuracy: Vec<f64>,
    pub image_accuracy_mean: f64,
}

/// Generated latent endpoints and decoded images of one class.
pub struct ClassSamples {
    pub latents: Vec<Vec<f64>>,
    pub images: Vec<Vec<f64>>,
}

/// Deploys score net and decoder on `cfg.device` and generates `count`
/// samples per class with guidance.
pub fn sample_letters(model: &LettersModel, cfg: &RunConfig, count: usize) -> Result<Vec<ClassSamples>> {
    let analog = deploy_score(&model.score, cfg, &cfg.device, cfg.seeds.deploy)?;
    let decoder = AnalogDecoder::deploy(
        &model.vae.decoder,
        &cfg.device,
        cfg.clamp,
        cfg.unit_volt,
        &mut from_seed(cfg.seeds.decoder_deploy),
    )?;
    sample_letters_with(&analog, Some(&decoder), model, cfg, count)
}

/// As [`sample_letters`] with explicit score function and decoder (`None`
/// decodes digitally).
pub fn sample_letters_with<S: ScoreFn>(
    score: &S,
    decoder: Option<&AnalogDecoder>,
    model: &LettersModel,
    cfg: &RunConfig,
    count: usize,
) -> Result<Vec<ClassSamples>> {
    (0..cfg.latent.classes())
        .map(|class| {
            let solver = solver_with(&cfg.solver, None, derive_seed(cfg.solver.seed, class as u64));
            let latents = batch_sample(score, &cfg.schedule, &solver, count, Some(class), Some(&cfg.guidance))?;
            let mut rng = from_seed(derive_seed(cfg.seeds.decode, class as u64));
            let images = latents
                .iter()
                .map(|z| match decoder {
                    Some(d) => decode(&model.vae.decoder, z, DecodeMode::Analog(d, &mut rng)),
                    None => decode(&model.vae.decoder, z, DecodeMode::Digital),
                })
                .collect::<Result<_>>()?;
            Ok(ClassSamples { latents, images })
        })
        .collect()
}

/// Guided latent trajectories of one class, seeded as in
/// [`sample_letters_with`]. With `init`, a single trajectory starts from that
/// point instead of a Gaussian draw.
pub fn letter_trajectories<S: ScoreFn>(
    score: &S,
    cfg: &RunConfig,
    class: usize,
    count: usize,
    init: Option<&[f64]>,
) -> Result<Vec<Trajectory>> {
    let solver = solver_with(&cfg.solver, None, derive_seed(cfg.solver.seed, class as u64));
    match init {
        Some(x) => {
            let mut ctx = EvalCtx::new(stream(solver.seed, 0));
            Ok(vec![integrate(
                score,
                &cfg.schedule,
                &solver,
                x,
                Some(class),
                Some(&cfg.guidance),
                &mut ctx,
            )?])
        }
        None => batch_trajectories(score, &cfg.schedule, &solver, count, Some(class), Some(&cfg.guidance)),
    }
}

pub fn score_letters(samples: &[ClassSamples], classifier: &MeanImageClassifier, cfg: &RunConfig) -> Result<LettersReport> {
    let mut latent_accuracy = Vec::new();
    let mut image_accuracy = Vec::new();
    for (class, s) in samples.iter().enumerate() {
        let labels = vec![class; s.latents.len()];
        latent_accuracy.push(nearest_center_accuracy(&s.latents, &labels, &cfg.latent.centers)?);
        let hits = s.images.iter().filter(|img| classifier.classify(img) == class).count();
        image_accuracy.push(hits as f64 / s.images.len().max(1) as f64);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(LettersReport {
        per_class: samples.first().map_or(0, |s| s.latents.len()),
        latent_accuracy_mean: mean(&latent_accuracy),
        image_accuracy_mean: mean(&image_accuracy),
        latent_accuracy,
        image_accuracy,
    })
}
