use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Load, Policy, SignalAccess, Transfer, WaveView};
use crate::ids::{DeviceId, StageId};
use crate::task::Placement;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub lookdepth: u32,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam_width: 4, lookdepth: 2 }
    }
}

/// Beam search over joint assignments of the frontier and a few downstream
/// levels, scored by estimated completion on base compute and busy/idle only.
#[derive(Clone, Debug, Default)]
pub struct HaloPolicy {
    pub beam: BeamConfig,
    /// (estimated makespan, summed finish) of the last committed wave.
    pub last_objective: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
struct Partial {
    devices: Vec<DeviceId>,
    avail: BTreeMap<DeviceId, f64>,
    finish: BTreeMap<StageId, f64>,
    max_finish: f64,
    sum_finish: f64,
}

impl Partial {
    fn key(&self) -> (f64, f64) {
        (self.max_finish, self.sum_finish)
    }

    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.max_finish
            .total_cmp(&other.max_finish)
            .then(self.sum_finish.total_cmp(&other.sum_finish))
            .then_with(|| self.devices.cmp(&other.devices))
    }
}

impl HaloPolicy {
    pub fn new(beam: BeamConfig) -> Self {
        Self { beam: BeamConfig { beam_width: beam.beam_width.max(1), ..beam }, last_objective: None }
    }

    fn sequence(&self, view: &WaveView<'_>) -> Vec<StageId> {
        let frontier: BTreeSet<&StageId> = view.frontier().iter().collect();
        let mut later: BTreeMap<StageId, u32> = BTreeMap::new();
        for v in view.frontier() {
            for (off, w) in view.dag().descendants(v) {
                if *off <= self.beam.lookdepth && !frontier.contains(w) {
                    let e = later.entry(w.clone()).or_insert(*off);
                    *e = (*e).min(*off);
                }
            }
        }
        let mut rest: Vec<(u32, StageId)> = later.into_iter().map(|(w, off)| (off, w)).collect();
        rest.sort();
        view.frontier().iter().cloned().chain(rest.into_iter().map(|(_, w)| w)).collect()
    }

    fn search(&self, view: &WaveView<'_>, seq: &[StageId], width: usize) -> Partial {
        let clock = view.clock();
        let n = view.frontier().len().max(1) as f64;
        let busy_guess = view.frontier().iter().map(|v| view.mean_base_cost(v)).sum::<f64>() / n;
        let avail = view
            .devices()
            .into_iter()
            .map(|d| {
                let t = if view.is_idle(&d) { clock } else { clock + busy_guess };
                (d, t)
            })
            .collect();
        let mut beam = vec![Partial { devices: Vec::new(), avail, finish: BTreeMap::new(), max_finish: clock, sum_finish: 0.0 }];
        for v in seq {
            let ready = |p: &Partial| {
                view.dag().parents(v).iter().filter_map(|u| p.finish.get(u)).copied().fold(clock, f64::max)
            };
            let mut next = Vec::new();
            for p in &beam {
                let r = ready(p);
                for d in view.eligible(v) {
                    let f = p.avail[d].max(r) + view.base_cost(v, d);
                    let mut q = p.clone();
                    q.devices.push(d.clone());
                    q.avail.insert(d.clone(), f);
                    q.finish.insert(v.clone(), f);
                    q.max_finish = q.max_finish.max(f);
                    q.sum_finish += f;
                    next.push(q);
                }
            }
            if next.is_empty() {
                continue;
            }
            next.sort_by(|a, b| a.cmp(b));
            next.truncate(width);
            beam = next;
        }
        beam.into_iter().next().expect("beam is never empty")
    }

    /// Best joint assignment and its heuristic objective at the given width.
    pub fn plan_with_width(&self, view: &WaveView<'_>, width: usize) -> (Vec<Placement>, (f64, f64)) {
        let seq = self.sequence(view);
        let mut best = self.search(view, &seq, width.max(1));
        if width > 1 {
            let greedy = self.search(view, &seq, 1);
            if greedy.cmp(&best).is_lt() {
                best = greedy;
            }
        }
        let mut used = BTreeSet::new();
        let mut out = Vec::new();
        for (v, d) in view.frontier().iter().zip(&best.devices) {
            if used.insert(d.clone()) {
                out.push(Placement::new(v.clone(), 0, d.clone()));
            }
        }
        (out, best.key())
    }
}

impl Policy for HaloPolicy {
    fn name(&self) -> &str {
        "halo"
    }

    fn signals(&self) -> SignalAccess {
        SignalAccess {
            load: Load::Coarse,
            residency: false,
            transfer: Transfer::None,
            prefix: false,
            compute: true,
            dag: true,
            cost_model: false,
        }
    }

    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement> {
        let (out, obj) = self.plan_with_width(view, self.beam.beam_width);
        self.last_objective = Some(obj);
        out
    }
}
