//! Continual learning for bimodal contrastive encoders.
//!
//! An input encoder and a label encoder are trained so that each input's
//! embedding is closest to its class's label embedding. Training over a
//! stream of tasks mixes the current task's data with a class-balanced
//! replay buffer and optimizes either a global contrastive loss with
//! moving-average normalizer estimates ([`gcl`]) or a KL-regularized group
//! DRO objective over per-class losses ([`gdro`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod gcl;
pub mod gdro;
pub mod memory;
pub mod model;
pub mod optim;
pub mod pairs;
pub mod report;
pub mod runner;

pub use data::{Dataset, Sample};
pub use error::{Error, Result};
pub use gcl::{GclEstimatorState, Temperature};
pub use gdro::{GdroConfig, GdroEstimatorState};
pub use memory::MemoryBuffer;
pub use model::{init_params, EncoderConfig, Embedding, ParamVector};
pub use optim::{OptimizerConfig, OptimizerMode, OptimizerState};
pub use runner::{AccuracyMatrix, Method, Protocol, RunConfig, Task, TaskStream};
