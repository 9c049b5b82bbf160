//! Option comparison network for multiple-choice reading comprehension.
//!
//! Everything runs on a small reverse-mode tape over `f64` matrices
//! ([`numerics::Tape`]). A toy skimmer stands in for a pre-trained
//! encoder; the comparison, gating, co-attention and self-attention
//! stack sits on top ([`model`]). [`training`] holds the optimizer,
//! schedule, checkpoints and the finite-difference gradient check.

pub mod attention;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod skimmer;
pub mod training;

pub use config::RunConfig;
pub use data::{Example, Limits, Vocabulary};
pub use error::{Error, Result};
pub use model::{forward_example, ModelConfig, Ocn};
pub use numerics::{Matrix, ParamSet};
pub use parallel::Parallelism;
pub use training::{Checkpoint, TrainConfig};
