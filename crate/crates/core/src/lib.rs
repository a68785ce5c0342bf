//! Spectral inference for optically detected magnetic resonance (ODMR).
//!
//! The crate holds the pure numerical pieces of the pipeline:
//!
//! * [`spectrum`]: the double-Lorentzian line shape, frequency grids and
//!   Z-score normalization.
//! * [`physics`]: splitting to magnetic field and center frequency to
//!   temperature conversions.
//! * [`synth`]: seeded synthetic spectra with Poisson shot noise.
//! * [`nn`]: a 1D convolutional regressor with analytic gradients, a
//!   heteroscedastic Gaussian loss, AdamW and a warmup + cosine schedule.
//! * [`fitter`]: projected Levenberg-Marquardt with Monte-Carlo restarts and
//!   network-seeded (hybrid) fitting.
//! * [`stats`] and [`widefield`]: evaluation statistics and per-pixel map
//!   post-processing.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. IO, threading and the command line live in the `odmr-forge`
//! companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod fitter;
pub mod nn;
pub mod physics;
pub mod rng;
pub mod spectrum;
pub mod stats;
pub mod synth;
pub mod widefield;

pub use error::{Error, Result};
pub use fitter::{FitConfig, FitModelParams, FitResult};
pub use nn::{ArchSpec, ModelWeights, Prediction, TrainConfig};
pub use physics::PhysicsConstants;
pub use spectrum::{FrequencyGrid, LineshapeParams, NormalizedSpectrum, Spectrum};
pub use synth::{LabeledSpectrum, PriorConfig, TargetVector};

/// Number of points in the spectra the network consumes.
pub const INPUT_LENGTH: usize = 101;
