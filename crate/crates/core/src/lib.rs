//! Simulation and planning toolkit for a two-tube concentric-tube steerable
//! drilling robot: kinematics, voxel drilling, metrology and inverse design.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod model;
pub mod phantom;
pub mod planner;
pub mod sim;

pub use error::{Error, Result};
