//! Semantic scene completion of sparse LiDAR scans by diffusion in point space.
//!
//! A partial scan with per-point class probabilities is duplicated, diffused
//! to pure noise around its own points and denoised by a conditioned network
//! into a dense completed cloud, optionally sharpened by a refinement network.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evaluation;
pub mod geom;
pub mod nn;
pub mod pipeline;
pub mod refinement;
pub mod rng;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};
