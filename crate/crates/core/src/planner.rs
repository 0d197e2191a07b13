//! Exact per-wave frontier placement by branch and bound.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::ids::{DeviceId, StageId};
use crate::state::ExecutionState;
use crate::task::Placement;

pub const DEFAULT_BUDGET: Duration = Duration::from_millis(250);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub stage: StageId,
    pub slot: u32,
    pub device: DeviceId,
    /// Planning score of this slot.
    pub psi: f64,
    /// Dispatch value added on top of `psi` (slot 0 only).
    pub bonus: f64,
}

impl Candidate {
    pub fn value(&self) -> f64 {
        self.psi + self.bonus
    }

    pub fn placement(&self) -> Placement {
        Placement { stage: self.stage.clone(), slot: self.slot, device: self.device.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierProblem {
    /// Frontier stages with their shard bound.
    pub stages: BTreeMap<StageId, u32>,
    pub devices: Vec<DeviceId>,
    pub candidates: Vec<Candidate>,
}

impl FrontierProblem {
    /// Panics when a candidate references an unknown stage or device or an out-of-range slot.
    pub fn new(stages: BTreeMap<StageId, u32>, devices: Vec<DeviceId>, candidates: Vec<Candidate>) -> Self {
        for c in &candidates {
            let r = *stages.get(&c.stage).unwrap_or_else(|| panic!("candidate references unknown stage {}", c.stage));
            assert!(c.slot < r, "candidate slot {} out of range for {}", c.slot, c.stage);
            assert!(devices.contains(&c.device), "candidate references unknown device {}", c.device);
        }
        let mut devices = devices;
        devices.sort();
        devices.dedup();
        Self { stages, devices, candidates }
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontierSolution {
    /// Sorted by (stage, slot, device).
    pub selected: Vec<Placement>,
    pub objective: f64,
    pub optimal: bool,
    pub wall_time: f64,
    pub nodes_explored: u64,
}

/// Checks C1 to C3 on a selection; eligibility is enforced by the candidate list.
pub fn check_constraints(selected: &[Placement]) -> Result<(), String> {
    let mut devices = BTreeSet::new();
    let mut slots = BTreeSet::new();
    for p in selected {
        if !devices.insert(&p.device) {
            return Err(format!("device {} used twice", p.device));
        }
        if !slots.insert((&p.stage, p.slot)) {
            return Err(format!("slot {} of {} assigned twice", p.slot, p.stage));
        }
    }
    for p in selected {
        if p.slot > 0 && !slots.contains(&(&p.stage, p.slot - 1)) {
            return Err(format!("slot {} of {} without slot {}", p.slot, p.stage, p.slot - 1));
        }
    }
    Ok(())
}

/// Objective summed in selection order so equal selections give equal sums.
fn canonical(sel: &mut Vec<(Placement, f64)>) -> (Vec<Placement>, f64) {
    sel.sort_by(|a, b| a.0.cmp(&b.0));
    let obj = sel.iter().map(|(_, v)| *v).sum();
    (sel.iter().map(|(p, _)| p.clone()).collect(), obj)
}

/// True when `(obj, sel)` beats the incumbent: higher objective, then lexicographically smaller.
pub fn improves(obj: f64, sel: &[Placement], best: Option<&(f64, Vec<Placement>)>) -> bool {
    match best {
        None => true,
        Some((b, bs)) => obj > *b || (obj == *b && sel < bs.as_slice()),
    }
}

struct Search<'a> {
    per_device: Vec<Vec<&'a Candidate>>,
    device_max: Vec<f64>,
    used: BTreeSet<(&'a StageId, u32)>,
    path: Vec<&'a Candidate>,
    best: Option<(f64, Vec<Placement>)>,
    nodes: u64,
    start: Instant,
    budget: Duration,
    timed_out: bool,
}

impl<'a> Search<'a> {
    fn dfs(&mut self, i: usize, sum: f64) {
        self.nodes += 1;
        if self.nodes.is_multiple_of(1024) && self.start.elapsed() > self.budget {
            self.timed_out = true;
        }
        if self.timed_out {
            return;
        }
        if i == self.per_device.len() {
            self.leaf();
            return;
        }
        if let Some((b, _)) = &self.best {
            let bound = sum + self.device_max[i..].iter().sum::<f64>();
            if bound < b - 1e-9 * b.abs().max(1.0) {
                return;
            }
        }
        let options = self.per_device[i].clone();
        for c in options {
            let key = (&c.stage, c.slot);
            if self.used.contains(&key) {
                continue;
            }
            if c.slot > 0 && !self.slot_reachable(&c.stage, c.slot - 1, i) {
                continue;
            }
            self.used.insert(key);
            self.path.push(c);
            self.dfs(i + 1, sum + c.value());
            self.path.pop();
            self.used.remove(&(&c.stage, c.slot));
        }
        self.dfs(i + 1, sum);
    }

    /// Slot is already taken or could still be taken by a later device.
    fn slot_reachable(&self, stage: &StageId, slot: u32, i: usize) -> bool {
        self.used.contains(&(stage, slot))
            || self.per_device[i + 1..].iter().any(|cs| cs.iter().any(|c| &c.stage == stage && c.slot == slot))
    }

    fn leaf(&mut self) {
        let mut sel: Vec<(Placement, f64)> = self.path.iter().map(|c| (c.placement(), c.value())).collect();
        let (sel, obj) = canonical(&mut sel);
        if check_constraints(&sel).is_err() {
            return;
        }
        if improves(obj, &sel, self.best.as_ref()) {
            self.best = Some((obj, sel));
        }
    }
}

pub fn solve_frontier(problem: &FrontierProblem, budget: Duration) -> FrontierSolution {
    let start = Instant::now();
    let mut per_device: Vec<Vec<&Candidate>> = problem
        .devices
        .iter()
        .map(|d| problem.candidates.iter().filter(|c| &c.device == d).collect())
        .collect();
    for cs in &mut per_device {
        cs.sort_by(|a, b| {
            b.value().total_cmp(&a.value()).then_with(|| (&a.stage, a.slot).cmp(&(&b.stage, b.slot)))
        });
    }
    let device_max = per_device.iter().map(|cs| cs.first().map_or(0.0, |c| c.value().max(0.0))).collect();
    let mut s = Search {
        per_device,
        device_max,
        used: BTreeSet::new(),
        path: Vec::new(),
        best: None,
        nodes: 0,
        start,
        budget,
        timed_out: false,
    };
    s.dfs(0, 0.0);
    let (objective, selected) = s.best.unwrap_or((0.0, Vec::new()));
    FrontierSolution {
        selected,
        objective,
        optimal: !s.timed_out,
        wall_time: start.elapsed().as_secs_f64(),
        nodes_explored: s.nodes,
    }
}

/// One candidate per (stage, slot, eligible device); slot 0 carries the dispatch value.
pub fn build_problem(frontier: &[StageId], cm: &CostModel<'_>, state: &ExecutionState) -> FrontierProblem {
    let mut stages = BTreeMap::new();
    let mut candidates = Vec::new();
    for v in frontier {
        let s = cm.stage(v);
        let n = cm.workload().stage_queries(v).len().max(1) as u32;
        let r = cm.shard_bound(v).min(n).min(s.eligible_devices.len().max(1) as u32);
        stages.insert(v.clone(), r);
        for k in 0..r {
            for d in &s.eligible_devices {
                let psi = cm.plan_score(v, k, d, state);
                let bonus = if k == 0 { cm.dispatch_value(v, d) } else { 0.0 };
                candidates.push(Candidate { stage: v.clone(), slot: k, device: d.clone(), psi, bonus });
            }
        }
    }
    FrontierProblem::new(stages, state.devices().cloned().collect(), candidates)
}
