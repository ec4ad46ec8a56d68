//! Terrain- and robot-aware forward dynamics workbench.
//!
//! The crate covers the whole experimental loop:
//!
//! * [`terrain`]: procedural RGB terrain rasters and the colour-to-friction map,
//! * [`sim`]: a unicycle robot with Coulomb friction, integrated with an adaptive
//!   Dormand-Prince scheme ([`ode`]),
//! * [`noise`]: power-law (coloured) action noise,
//! * [`model`]: the context-conditional latent GRU dynamics model and its
//!   variational training objective,
//! * [`dataset`] and [`train`]: data generation and the optimisation loop,
//! * [`planner`]: receding-horizon cross-entropy planning,
//! * [`eval`] and [`stats`]: prediction/planning studies and their statistics,
//! * [`pipeline`]: configuration files, manifests and the end-to-end driver.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod nn;
pub mod noise;
pub mod ode;
pub mod pipeline;
pub mod planner;
pub mod render;
pub mod sim;
pub mod stats;
pub mod terrain;
pub mod train;

pub use error::{Error, Result};
