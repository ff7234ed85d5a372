//! Learning feed-forward dynamics models from trajectory data and judging
//! them by how well a CEM model-predictive controller plans with them.

pub mod dataset;
pub mod envs;
pub mod eval;
pub mod harness;
pub mod error;
pub mod models;
pub mod numerics;
pub mod par;
pub mod planner;
pub mod training;

pub use error::{Error, Result};
