//! Stochastic Chaplygin ball on SO(n).
//!
//! The crate is organized in layers: `lie_kernel` realizes so(n) and SO(n),
//! `ball_model` holds the rolling-ball data (inertia, moving frames, the
//! compressed metric and its density), `nh_geometry` builds the two
//! connections and the drift field, `sde_engine` integrates the projected
//! Stratonovich equations, and `diffusion_lab` runs the statistical
//! verification layer on top.

pub mod ball_model;
pub mod diffusion_lab;
pub mod error;
pub mod lie_kernel;
pub mod nh_geometry;
pub mod sde_engine;

pub use error::{CoreError, Result};
