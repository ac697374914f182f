//! Discover low-dimensional state variables and sparse governing equations
//! from video-like observations of dynamical systems.

pub mod dynamics;
pub mod error;
pub mod latent;
pub mod llm;
pub mod pipeline;
pub mod pixel_detect;
pub mod plot;
pub mod reason;
pub mod sindy;
pub mod smoothing;
pub mod termlib;

pub use error::{Error, Result};
