use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use super::{Policy, SignalAccess, SolverStats, WaveView};
use crate::executor::partition_shards;
use crate::ids::{DeviceId, QueryId, StageId};
use crate::planner::{build_problem, solve_frontier, DEFAULT_BUDGET};
use crate::task::Placement;

/// Horizon-aware frontier planning with exact per-wave placement.
#[derive(Clone, Debug)]
pub struct FatePolicy {
    pub budget: Duration,
    stats: SolverStats,
}

impl Default for FatePolicy {
    fn default() -> Self {
        Self { budget: DEFAULT_BUDGET, stats: SolverStats::default() }
    }
}

fn permutations(items: &[DeviceId]) -> Vec<Vec<DeviceId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// Reorders the devices of each sharded stage so the contiguous query split
/// lands shards next to their parents' outputs. The device set is unchanged.
fn align_slots(view: &WaveView<'_>, selected: Vec<Placement>) -> Vec<Placement> {
    let cm = view.cost_model();
    let state = view.state();
    let mut by_stage: BTreeMap<StageId, BTreeMap<u32, DeviceId>> = BTreeMap::new();
    for p in &selected {
        by_stage.entry(p.stage.clone()).or_default().insert(p.slot, p.device.clone());
    }
    let mut out = Vec::with_capacity(selected.len());
    for (v, slots) in by_stage {
        let devs: Vec<DeviceId> = slots.into_values().collect();
        let mut best = devs.clone();
        if devs.len() > 1 {
            let stage = cm.stage(&v);
            let queries: Vec<QueryId> = cm.workload().stage_queries(&v).iter().map(|q| q.id.clone()).collect();
            let cost = |order: &[DeviceId]| -> f64 {
                let Ok(shards) = partition_shards(stage, order, &queries, order.len() as u32) else {
                    return f64::INFINITY;
                };
                shards
                    .iter()
                    .map(|(d, qs)| {
                        let set: BTreeSet<&QueryId> = qs.iter().collect();
                        cm.transfer_time(&v, d, Some(&set), state)
                    })
                    .sum()
            };
            let mut best_cost = cost(&devs);
            for order in permutations(&devs) {
                let c = cost(&order);
                if c < best_cost {
                    best_cost = c;
                    best = order;
                }
            }
        }
        out.extend(best.into_iter().enumerate().map(|(k, d)| Placement::new(v.clone(), k as u32, d)));
    }
    out
}

impl Policy for FatePolicy {
    fn name(&self) -> &str {
        "fate"
    }

    fn signals(&self) -> SignalAccess {
        SignalAccess::ALL
    }

    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement> {
        let problem = build_problem(view.frontier(), view.cost_model(), view.state());
        let sol = solve_frontier(&problem, self.budget);
        self.stats.record(sol.wall_time, sol.optimal, sol.nodes_explored);
        if !sol.selected.is_empty() {
            return align_slots(view, sol.selected);
        }
        // Every slot-0 value is negative: still make progress with the least bad one.
        let mut best: Option<&crate::planner::Candidate> = None;
        for c in problem.candidates.iter().filter(|c| c.slot == 0) {
            let better = match best {
                None => true,
                Some(b) => c.value() > b.value() || (c.value() == b.value() && c.placement() < b.placement()),
            };
            if better {
                best = Some(c);
            }
        }
        best.map(|c| vec![c.placement()]).unwrap_or_default()
    }

    fn solver_stats(&self) -> Option<&SolverStats> {
        Some(&self.stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::default_platform;
    use crate::cost::{CostModel, ScoreWeights};
    use crate::ids::TaskId;
    use crate::state::ExecutionState;
    use crate::task::ScheduledTask;
    use crate::workflow::tests::stage;
    use crate::workflow::{annotate_topology, Query, WorkflowDag, WorkflowInstance, Workload};

    #[test]
    fn shard_slots_follow_parent_outputs() {
        let stages: Vec<_> = ["a", "b"]
            .iter()
            .map(|id| {
                let mut s = stage(id);
                s.model = "qwen2.5-7b".into();
                s.eligible_devices = ["d0".into(), "d1".into()].into_iter().collect();
                s.shard_bound = 2;
                s.output_token_proxy = 250;
                s
            })
            .collect();
        let dag = WorkflowDag::new("wf", "t", stages, [("a".into(), "b".into())]);
        let queries: Vec<Query> = (0..4)
            .map(|i| Query { id: QueryId::new(format!("q{i}")), prompt_tokens: 100, prefix_group: None, prefix_tokens: 0 })
            .collect();
        let w = Workload::single(&WorkflowInstance::new(annotate_topology(&dag).unwrap(), queries).unwrap());
        let p = default_platform();
        let weights = ScoreWeights::default();
        let cm = CostModel::new(&w, &p, &weights);
        let mut st = ExecutionState::new(&p.topology);
        let a = w.stage(&"a".into()).unwrap();
        st.commit(&"a".into(), 2).unwrap();
        let qs: Vec<QueryId> = (0..4).map(|i| QueryId::new(format!("q{i}"))).collect();
        for (k, d) in ["d0", "d1"].iter().enumerate() {
            let t = ScheduledTask {
                id: TaskId(k as u64),
                stage: "a".into(),
                slot: k as u32,
                device: (*d).into(),
                queries: qs[2 * k..2 * k + 2].to_vec(),
                order: k as u64,
                issue: None,
                finish: None,
            };
            st.on_task_start(&t, a, 1.0).unwrap();
        }
        for k in 0..2 {
            st.on_task_complete(TaskId(k), 1.0, a, &[]).unwrap();
        }
        let frontier = vec![StageId::from("b")];
        let view = WaveView::new(&cm, &st, &frontier, SignalAccess::ALL);
        let out = align_slots(&view, vec![Placement::new("b", 0, "d1"), Placement::new("b", 1, "d0")]);
        assert_eq!(out, vec![Placement::new("b", 0, "d0"), Placement::new("b", 1, "d1")]);
        let same = align_slots(&view, vec![Placement::new("b", 0, "d0")]);
        assert_eq!(same, vec![Placement::new("b", 0, "d0")]);
    }
}
