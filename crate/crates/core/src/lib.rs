//! Contained diffusion for virtual try-on, on a procedural 2-d avatar world.
//!
//! Stages, in pipeline order: [`synthworld`] renders ground truth,
//! [`warpkit`] builds control images, [`latentcore`] is the autoencoder,
//! [`diffcore`] trains the control-initialized denoiser, [`inferpipe`]
//! generates, and [`evalharness`] runs the ablations.

pub mod checkpoint;
pub mod diffcore;
pub mod inferpipe;
pub mod error;
pub mod evalharness;
pub mod raster;
pub mod synthworld;
pub mod latentcore;
pub mod telemetry;
pub mod training;
pub mod warpkit;

pub use error::{Error, Result};
