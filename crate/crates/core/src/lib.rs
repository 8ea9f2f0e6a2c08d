//! Particle-filter data assimilation with guided diffusion-model proposals.

pub mod config;
pub mod denoiser;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod oracle;
pub mod parallel;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
