//! Command-line front end and teleoperation service for the drilling
//! simulator.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod session;
