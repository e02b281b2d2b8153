//! Batch front end: JSON run configuration and the `train`, `simulate`,
//! `rollout`, `compare` and `export` commands.

pub mod commands;
pub mod config;

pub use config::{RunConfig, TrainSettings};
