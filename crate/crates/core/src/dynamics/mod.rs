//! Ground-truth simulators: planar ODE systems rendered as moving-object
//! videos, and periodic reaction-diffusion / shallow-water fields.

mod frames;
mod ode;
mod pde;
mod render;
mod systems;

pub use frames::{add_observation_noise, FrameMeta, FrameSequence, WorldMap};
pub use ode::{integrate_ode, rk4, Trajectory, OVERFLOW_GUARD};
pub use pde::{
    advance_field, channel_names, default_pde_run, dt_limit, initial_field, simulate_pde, smooth_random_field, Field,
    PdeGrid, PdeRun,
};
pub use render::{intensity_centroid, render_pixel_video};
pub use systems::{builtin_system, PixelSetup, SystemKind, SystemName, SystemSpec};
