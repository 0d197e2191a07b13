use serde::{Deserialize, Serialize};

use crate::ids::{DeviceId, QueryId, StageId, TaskId};

/// One (stage, slot, device) choice returned by a policy for the current wave.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Placement {
    pub stage: StageId,
    pub slot: u32,
    pub device: DeviceId,
}

impl Placement {
    pub fn new(stage: impl Into<StageId>, slot: u32, device: impl Into<DeviceId>) -> Self {
        Self { stage: stage.into(), slot, device: device.into() }
    }
}

/// A materialized shard of a stage bound to one device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTask {
    pub id: TaskId,
    pub stage: StageId,
    pub slot: u32,
    pub device: DeviceId,
    pub queries: Vec<QueryId>,
    /// Global commit order; per device it is also the issue order.
    pub order: u64,
    pub issue: Option<f64>,
    pub finish: Option<f64>,
}
