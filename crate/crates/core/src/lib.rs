//! Semi-supervised variational autoencoder for UWB ranging error mitigation.
//!
//! The library is self-contained: an f64 tensor core with reverse-mode
//! autodiff, diagonal-Gaussian machinery, a dual-latent VAE with an
//! AdaIN-conditioned decoder plus regression/classification heads, Adam with
//! a step-decay schedule, a synthetic UWB waveform generator with known
//! ground truth, and a training/evaluation harness.

pub mod error;
pub mod config;
pub mod data;
pub mod dist;
pub mod gradcheck;
pub mod harness;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
