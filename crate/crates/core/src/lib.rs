//! Multi-timestep dynamics models for model-based reinforcement learning.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod nn;
pub mod objective;
pub mod planner;
pub mod train;

pub use error::{Error, Result};
