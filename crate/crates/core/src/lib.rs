//! Diffusion-based interpolation tracking at desk scale.
//!
//! Frames are encoded to latents, a small attention denoiser carries the
//! current frame's latent to the next frame's latent through an iterative
//! interpolation process, and target locations are read back out of the
//! denoiser's captured self- and cross-attention maps.

pub mod annotations;
pub mod codec;
pub mod conditioning;
pub mod config;
pub mod denoiser;
pub mod engine;
pub mod error;
pub mod extraction;
pub mod metrics;
pub mod numerics;
pub mod schedule;
pub mod synthvid;
pub mod tracker;

pub use error::{Error, Result};
