//! Attention-guided knowledge distillation with iterative structured pruning.

#![allow(clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod data;
pub mod distill;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod prune;
pub mod telemetry;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
