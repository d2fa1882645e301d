// SPDX-License-Identifier: Apache-2.0

//! Simulator of an analog in-memory solver for score-based diffusion.
//!
//! Score networks and a small VAE are trained digitally, deployed onto
//! modelled resistive-memory crossbars with write and read noise, and
//! sampled by integrating the reverse-time SDE or probability-flow ODE.

pub mod analog_net;
pub mod config;
pub mod data;
pub mod device;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod export;
pub mod latent;
pub mod rng;
pub mod sde;
pub mod solver;
pub mod training;

pub use error::{Error, Result};
