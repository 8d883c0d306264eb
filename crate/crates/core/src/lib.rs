//! Federated prompt learning for open-vocabulary detection on a synthetic
//! vision-language surrogate.
//!
//! The only trainable component is a small cross-attention prompt
//! generator. Clients train it locally on their own detection tasks and a
//! server averages the parameters each round; the frozen surrogate
//! backbone never moves.

pub mod baselines;
pub mod boxes;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod network;
pub mod numerics;
pub mod pipeline;
pub mod promptgen;
pub mod surrogate;

pub use error::{Error, Result};
pub use exec::ExecMode;
