// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

/// Errors raised by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("time {t} outside [0, {t_end}]")]
    TimeOutOfRange { t: f64, t_end: f64 },

    #[error(
        "programming failed at cell {cell:?} after {cycles} cycles: target {target} mS, best {best} mS"
    )]
    Programming {
        cell: Option<(usize, usize)>,
        target: f64,
        best: f64,
        cycles: u32,
    },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("integration diverged at step {step} (lab time {lab_time:.6} s)")]
    Divergence { step: usize, lab_time: f64 },

    #[error("training diverged at step {step} (loss {loss}); try a lower learning rate")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("{} of {total} samples failed; first: #{}: {}", failures.len(), failures[0].0, failures[0].1)]
    Batch {
        total: usize,
        failures: Vec<(usize, String)>,
    },

    #[error("missing input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: String },

    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }

    /// True for failures of the numerics (divergence, programming) rather than
    /// bad user input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Programming { .. }
                | Error::Divergence { .. }
                | Error::TrainingDiverged { .. }
                | Error::Batch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
