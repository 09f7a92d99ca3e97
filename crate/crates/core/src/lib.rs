//! Simulator and optimizer for view-induced trajectory manipulation: a static
//! camouflage texture whose appearance changes with the viewing angle drives a
//! surrogate 3D detector into progressive box displacement, which a tracker,
//! predictor and planner turn into a phantom cut-in.

pub mod attack;
pub mod downstream;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod scene;
pub mod surrogate;

pub use error::{Error, Result};
