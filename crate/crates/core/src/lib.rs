//! Terrain-following coverage planning for a 5-DOF aerial metal detector.
//!
//! The crate is organized around the survey pipeline:
//!
//! * [`gridmap`] fuses range returns into a 2.5D elevation map with normals,
//!   traversability, clearance queries and detector-signal accumulation.
//! * [`alignment`] holds the closed-form detector/surface alignment geometry.
//! * [`coverage`] builds the boustrophedon reference path.
//! * [`planner`] is the receding-horizon yaw lattice planner.
//! * [`sim`] provides synthetic terrain, LiDAR, vehicle and detector models and
//!   runs full surveys for the proposed planner and the baselines.
//! * [`fusion`] is the fixed-lag GNSS/odometry smoother with online extrinsics.
//! * [`metrics`] turns logs and maps into survey statistics.
//!
//! Data-parallel inner loops (ray casting, per-cell map passes, method
//! ablations) run on rayon when the `parallel` feature is enabled and fall
//! back to sequential iteration otherwise; see [`exec`].
// `!(x > 0.0)` is how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod angles;
pub mod coverage;
pub mod error;
pub mod exec;
pub mod fusion;
pub mod gridmap;
pub mod metrics;
pub mod planner;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
