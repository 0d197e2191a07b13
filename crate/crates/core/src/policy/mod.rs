//! Placement policies and the signal-gated view they plan against.

mod fate;
mod halo;
mod heft;
mod helix;
mod kvflow;
mod round_robin;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use fate::FatePolicy;
pub use halo::{BeamConfig, HaloPolicy};
pub use heft::HeftPolicy;
pub use helix::HelixPolicy;
pub use kvflow::KvFlowPolicy;
pub use round_robin::RoundRobinPolicy;

use crate::cost::CostModel;
use crate::ids::{DeviceId, ModelAlias, StageId};
use crate::state::ExecutionState;
use crate::task::Placement;
use crate::workflow::{Stage, WorkflowDag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Load {
    None,
    /// Busy or idle only.
    Coarse,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Transfer {
    None,
    TieBreak,
    Full,
}

/// Which state and platform signals a policy may read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignalAccess {
    pub load: Load,
    pub residency: bool,
    pub transfer: Transfer,
    pub prefix: bool,
    /// Base compute estimates.
    pub compute: bool,
    /// Dag structure beyond the ready frontier.
    pub dag: bool,
    /// The full cost model.
    pub cost_model: bool,
}

impl SignalAccess {
    pub const NONE: Self = Self {
        load: Load::None,
        residency: false,
        transfer: Transfer::None,
        prefix: false,
        compute: false,
        dag: false,
        cost_model: false,
    };

    pub const ALL: Self = Self {
        load: Load::Full,
        residency: true,
        transfer: Transfer::Full,
        prefix: true,
        compute: true,
        dag: true,
        cost_model: true,
    };
}

/// Per-run solver statistics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub solves: u64,
    pub optimal: u64,
    pub times: Vec<f64>,
    pub nodes: u64,
}

impl SolverStats {
    pub fn record(&mut self, wall: f64, optimal: bool, nodes: u64) {
        self.solves += 1;
        self.optimal += optimal as u64;
        self.times.push(wall);
        self.nodes += nodes;
    }

    pub fn mean(&self) -> f64 {
        if self.times.is_empty() {
            0.0
        } else {
            self.times.iter().sum::<f64>() / self.times.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.times.iter().copied().fold(0.0, f64::max)
    }

    /// Nearest-rank percentile.
    pub fn percentile(&self, p: f64) -> f64 {
        crate::metrics::nearest_rank(&self.times, p).unwrap_or(0.0)
    }
}

/// Read-only planning view of one wave. Accessors panic when the policy did
/// not declare the signal they expose.
pub struct WaveView<'a> {
    cm: &'a CostModel<'a>,
    state: &'a ExecutionState,
    frontier: &'a [StageId],
    access: SignalAccess,
}

impl<'a> WaveView<'a> {
    pub fn new(cm: &'a CostModel<'a>, state: &'a ExecutionState, frontier: &'a [StageId], access: SignalAccess) -> Self {
        Self { cm, state, frontier, access }
    }

    fn require(&self, ok: bool, what: &str) {
        assert!(ok, "policy read undeclared signal: {what}");
    }

    /// Ready stages in ascending id order.
    pub fn frontier(&self) -> &[StageId] {
        self.frontier
    }

    pub fn devices(&self) -> Vec<DeviceId> {
        self.state.devices().cloned().collect()
    }

    pub fn eligible(&self, v: &StageId) -> &BTreeSet<DeviceId> {
        &self.cm.stage(v).eligible_devices
    }

    pub fn shard_bound(&self, v: &StageId) -> u32 {
        self.cm.shard_bound(v)
    }

    pub fn clock(&self) -> f64 {
        self.state.clock()
    }

    pub fn is_idle(&self, d: &DeviceId) -> bool {
        self.require(self.access.load >= Load::Coarse, "load");
        self.state.device_free(d) <= self.state.clock()
    }

    pub fn device_free(&self, d: &DeviceId) -> f64 {
        self.require(self.access.load == Load::Full, "load");
        self.state.device_free(d).max(self.state.clock())
    }

    pub fn stage(&self, v: &StageId) -> &'a Stage {
        self.require(self.access.compute || self.access.dag, "stage");
        self.cm.stage(v)
    }

    pub fn base_cost(&self, v: &StageId, d: &DeviceId) -> f64 {
        self.require(self.access.compute, "compute");
        self.cm.base_cost(v, d)
    }

    pub fn mean_base_cost(&self, v: &StageId) -> f64 {
        self.require(self.access.compute, "compute");
        self.cm.mean_base_cost(v)
    }

    pub fn dag(&self) -> &'a WorkflowDag {
        self.require(self.access.dag, "dag");
        self.cm.workload().dag()
    }

    pub fn residency(&self, d: &DeviceId) -> Option<&ModelAlias> {
        self.require(self.access.residency, "residency");
        self.state.residency(d)
    }

    pub fn switch_time(&self, v: &StageId, d: &DeviceId) -> f64 {
        self.require(self.access.residency, "residency");
        self.cm.switch_time(v, d, self.state)
    }

    pub fn transfer_time(&self, v: &StageId, d: &DeviceId) -> f64 {
        self.require(self.access.transfer == Transfer::Full, "transfer");
        self.cm.transfer_time(v, d, None, self.state)
    }

    /// Transfer estimate for breaking ties only.
    pub fn transfer_tiebreak(&self, v: &StageId, d: &DeviceId) -> f64 {
        self.require(self.access.transfer >= Transfer::TieBreak, "transfer");
        self.cm.transfer_time(v, d, None, self.state)
    }

    /// Mean β·σ over an edge, for static ranking.
    pub fn mean_edge_transfer(&self, u: &StageId, v: &StageId) -> f64 {
        self.require(self.access.transfer == Transfer::Full, "transfer");
        self.cm.platform().topology.mean_beta() * self.cm.sigma(u, v) * self.cm.weights().transfer_x
    }

    /// Cached thousands of tokens usable by `v` on `d`.
    pub fn prefix_overlap(&self, v: &StageId, d: &DeviceId) -> f64 {
        self.require(self.access.prefix, "prefix");
        self.cm.overlap(v, d, self.state)
    }

    /// Whether any device holds a prefix `v` can use.
    pub fn prefix_cached_anywhere(&self, v: &StageId) -> bool {
        self.require(self.access.prefix, "prefix");
        self.state.devices().any(|d| self.cm.overlap(v, d, self.state) > 0.0)
    }

    pub fn cost_model(&self) -> &'a CostModel<'a> {
        self.require(self.access.cost_model, "cost model");
        self.cm
    }

    pub fn state(&self) -> &'a ExecutionState {
        self.require(self.access.cost_model, "full state");
        self.state
    }
}

pub trait Policy: Send {
    fn name(&self) -> &str;

    fn signals(&self) -> SignalAccess;

    /// Placements for the current wave: at most one per device, slots contiguous from 0.
    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement>;

    fn solver_stats(&self) -> Option<&SolverStats> {
        None
    }
}

pub const POLICY_NAMES: [&str; 6] = ["fate", "round_robin", "heft", "halo", "kvflow", "helix"];

/// Builds a policy by name.
pub fn make_policy(name: &str, beam: BeamConfig) -> Option<Box<dyn Policy>> {
    let p: Box<dyn Policy> = match name {
        "fate" => Box::new(FatePolicy::default()),
        "round_robin" | "rr" => Box::new(RoundRobinPolicy::default()),
        "heft" => Box::new(HeftPolicy::default()),
        "halo" => Box::new(HaloPolicy::new(beam)),
        "kvflow" => Box::new(KvFlowPolicy),
        "helix" => Box::new(HelixPolicy),
        _ => return None,
    };
    Some(p)
}

/// Eligible device minimizing `key`, ties to the lowest id, skipping `used`.
pub(crate) fn argmin_device(
    view: &WaveView<'_>,
    v: &StageId,
    used: &BTreeSet<DeviceId>,
    mut key: impl FnMut(&DeviceId) -> f64,
) -> Option<DeviceId> {
    let mut best: Option<(f64, &DeviceId)> = None;
    for d in view.eligible(v).iter().filter(|d| !used.contains(*d)) {
        let k = key(d);
        if best.is_none_or(|(b, _)| k < b) {
            best = Some((k, d));
        }
    }
    best.map(|(_, d)| d.clone())
}
