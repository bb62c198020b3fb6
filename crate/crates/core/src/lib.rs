//! Accumulative extreme-view video synthesis with group-relative policy
//! optimization, at desk scale.

pub mod accumulate;
pub mod camera;
pub mod clip;
pub mod commands;
pub mod depth_noise;
pub mod error;
pub mod metrics_eval;
pub mod generator_policy;
pub mod grpo_train;
pub mod io;
pub mod config;
pub mod reproject;
pub mod reward;
pub mod scene;

pub use error::{DevisError, Result};
