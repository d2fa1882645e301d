// SPDX-License-Identifier: Apache-2.0

//! `memdiff`: train, deploy, sample, sweep and evaluate the simulated analog
//! diffusion solver.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "memdiff", version, about = "Analog in-memory diffusion solver simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the score network (and the VAE for letters).
    Train(Common),
    /// Deploy the trained model and generate samples.
    Sample(SampleArgs),
    /// Write/read noise sweep of the ring task.
    Sweep(SweepArgs),
    /// Score a samples CSV.
    Eval(EvalArgs),
    /// Program the crossbars and export conductances plus a manifest.
    DeployExport(DeployArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Ring,
    Letters,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Ode,
    Sde,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run configuration (JSON). Defaults depend on --experiment.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experiment defaults to start from when no --config is given.
    #[arg(long, value_enum, default_value = "ring")]
    pub experiment: ExperimentArg,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Use synthetic H/K/U glyphs instead of EMNIST.
    #[arg(long)]
    pub synthetic: bool,
    /// EMNIST directory (otherwise $MEMDIFF_DATA_DIR, then data/).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Output directory (overrides output_dir from the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Model file (default: <output_dir>/model.json).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Samples (per class for letters); defaults to `count` in the config.
    #[arg(long)]
    pub count: Option<usize>,
    /// Letter to generate (H, K, U or class index); default all.
    #[arg(long)]
    pub label: Option<String>,
    /// Start one trajectory per class from this point, e.g. `-0.25,-0.5`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    pub init: Option<Vec<f64>>,
    /// Solver mode override.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Run the float networks instead of the simulated crossbars.
    #[arg(long)]
    pub digital: bool,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Restrict to one solver mode (default: sweep.modes).
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Samples CSV (columns x0, x1[, label]).
    #[arg(long)]
    pub samples: PathBuf,
    /// Reference points CSV; default regenerates the ground truth (ring) or
    /// encodes the training images (letters).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DeployArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    // clap exits 2 on usage errors; 2 is reserved for numerical failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Train(c) => commands::train(&c),
        Command::Sample(a) => commands::sample(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::DeployExport(a) => commands::deploy_export(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .find_map(|c| c.downcast_ref::<memdiff::Error>())
                .is_some_and(memdiff::Error::is_numerical);
            ExitCode::from(if numerical { 2 } else { 1 })
        }
    }
}
