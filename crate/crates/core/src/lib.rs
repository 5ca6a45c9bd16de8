//! Self-supervised diffusion denoising for 4D volumetric data.
//!
//! The pipeline pairs each slice `x` with the same slice of the previous
//! volume `x'`, trains a conditional predictor on a fused forward process
//! driven by the shuffled residual noise between the two, and samples with a
//! strided/dense ("run-walk") reverse schedule that can stop early once the
//! predicted output has moved far enough from the noisy input.

pub mod data;
pub mod di_noise;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use grid::{Grid, Mask};
pub use rng::Prng;
