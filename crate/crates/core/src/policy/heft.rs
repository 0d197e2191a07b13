use std::collections::{BTreeMap, BTreeSet};

use super::{argmin_device, Load, Policy, SignalAccess, Transfer, WaveView};
use crate::ids::StageId;
use crate::task::Placement;
use crate::workflow::WorkflowDag;

/// Upward-rank priority with earliest-finish device choice.
#[derive(Clone, Debug, Default)]
pub struct HeftPolicy {
    rank: BTreeMap<StageId, f64>,
}

pub(crate) fn upward_rank(
    dag: &WorkflowDag,
    cost: impl Fn(&StageId) -> f64,
    edge: impl Fn(&StageId, &StageId) -> f64,
) -> BTreeMap<StageId, f64> {
    let mut rank = BTreeMap::new();
    for v in dag.topo_order().unwrap_or_default().iter().rev() {
        let tail = dag.children(v).iter().map(|w| edge(v, w) + rank[w]).fold(0.0, f64::max);
        rank.insert(v.clone(), cost(v) + tail);
    }
    rank
}

impl HeftPolicy {
    pub fn rank(&self, v: &StageId) -> f64 {
        self.rank.get(v).copied().unwrap_or(0.0)
    }
}

impl Policy for HeftPolicy {
    fn name(&self) -> &str {
        "heft"
    }

    fn signals(&self) -> SignalAccess {
        SignalAccess {
            load: Load::Full,
            residency: true,
            transfer: Transfer::Full,
            prefix: false,
            compute: true,
            dag: true,
            cost_model: false,
        }
    }

    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement> {
        if self.rank.is_empty() {
            self.rank = upward_rank(view.dag(), |v| view.mean_base_cost(v), |u, w| view.mean_edge_transfer(u, w));
        }
        let mut order: Vec<&StageId> = view.frontier().iter().collect();
        order.sort_by(|a, b| self.rank(b).total_cmp(&self.rank(a)).then_with(|| a.cmp(b)));
        let mut used = BTreeSet::new();
        let mut out = Vec::new();
        for v in order {
            let eft = |d: &_| view.device_free(d) + view.switch_time(v, d) + view.transfer_time(v, d) + view.base_cost(v, d);
            if let Some(d) = argmin_device(view, v, &used, eft) {
                used.insert(d.clone());
                out.push(Placement::new(v.clone(), 0, d));
            }
        }
        out
    }
}
