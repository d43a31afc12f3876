//! Edge-computing task-offloading laboratory.
//!
//! The crate models a multi-server edge network with processor-sharing
//! queues, an exhaustive one-step oracle, look-ahead reward shaping, a
//! topology-agnostic scoring policy and its training loop, and the metric
//! suite used to compare policies. Numeric code is generic over [`Scalar`]
//! (`f32` or `f64`); the aliases below fix `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::result_large_err)]

pub mod error;
pub mod eval;
pub mod lacs;
pub mod model;
pub mod oracle;
pub mod policy;
pub mod scalar;
pub mod serializer;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Task = model::Task<f64>;
pub type ServerState = model::ServerState<f64>;
pub type DeviceState = model::DeviceState<f64>;
pub type SystemState = model::SystemState<f64>;
pub type CostParams = model::CostParams<f64>;
pub type SimConfig = sim::SimConfig<f64>;
pub type Environment = sim::Environment<f64>;
pub type StepRecord = sim::StepRecord<f64>;
pub type EpisodeTrace = sim::EpisodeTrace<f64>;
pub type LacsConfig = lacs::LacsConfig<f64>;
pub type PolicyParams = policy::PolicyParams<f64>;
pub type ScorerPolicy = policy::ScorerPolicy<f64>;
pub type TrainConfig = train::TrainConfig<f64>;
