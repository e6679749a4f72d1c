//! Latent volatility surfaces and weighted Monte Carlo path measures.
//!
//! The crate compresses daily normal-vol surfaces into a small latent space
//! with a pointwise variational autoencoder, maps latent coordinates to
//! weights on a fixed set of Brownian paths, and prices vanillas and
//! up-and-out barriers on the weighted measure. A classic entropy-dual
//! calibrator and a β = 0 SABR model serve as benchmarks.

pub mod bachelier;
pub mod error;
pub mod exotics;
pub mod market;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod sabr;
pub mod vae;
pub mod weight_decoder;
pub mod wmc;

pub use error::{Error, Result};
