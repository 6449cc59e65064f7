//! Robust adaptive nonlinear MPC for hook-based aerial pick-and-place
//! between moving platforms.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod feasibility;
pub mod ocp;
pub mod phases;
pub mod sim;
pub mod solver;
pub mod zoro;

pub use error::{Error, Result};
