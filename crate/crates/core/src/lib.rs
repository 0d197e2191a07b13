//! Scheduling engine and deterministic simulator for multi-model workflow DAGs.

pub mod benchgen;
pub mod catalog;
pub mod cost;
pub mod error;
pub mod executor;
pub mod ids;
pub mod metrics;
pub mod policy;
pub mod planner;
pub mod state;
pub mod task;
pub mod workflow;

pub use error::{DagError, ExecError, GenError};
pub use ids::{DeviceId, ModelAlias, PrefixGroup, QueryId, StageId, TaskId};
