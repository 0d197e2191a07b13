//! State-conditional cost model: score terms, corrected cost, scheduling and
//! planning scores, and realized simulated durations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::ExecError;
use crate::ids::{DeviceId, QueryId, StageId};
use crate::state::ExecutionState;
use crate::workflow::{ModelProfile, Platform, Query, Stage, Workload};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_future_planning: bool,
    pub no_locality: bool,
    pub no_same_model: bool,
    pub no_prefix: bool,
    pub no_shard: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 5] = ["no_future_planning", "no_locality", "no_same_model", "no_prefix", "no_shard"];

    pub fn set(&mut self, flag: &str) -> Result<(), String> {
        match flag {
            "no_future_planning" => self.no_future_planning = true,
            "no_locality" => self.no_locality = true,
            "no_same_model" => self.no_same_model = true,
            "no_prefix" => self.no_prefix = true,
            "no_shard" => self.no_shard = true,
            other => return Err(format!("unknown ablation flag {other}")),
        }
        Ok(())
    }

    pub fn from_flags<'a>(flags: impl IntoIterator<Item = &'a str>) -> Result<Self, String> {
        let mut a = Self::default();
        for f in flags {
            a.set(f)?;
        }
        Ok(a)
    }

    /// `+`-joined active flags, or empty.
    pub fn label(&self) -> String {
        let on = [self.no_future_planning, self.no_locality, self.no_same_model, self.no_prefix, self.no_shard];
        Self::FLAGS.iter().zip(on).filter(|(_, b)| *b).map(|(f, _)| *f).collect::<Vec<_>>().join("+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreWeights {
    pub lambda_q: f64,
    pub lambda_s: f64,
    pub lambda_tr: f64,
    pub lambda_c: f64,
    pub lambda_p: f64,
    pub lambda_r: f64,
    pub gamma: f64,
    pub horizon: u32,
    /// Seconds per overlapped 1000 tokens.
    pub kappa_prefix: f64,
    pub locality_coeff: f64,
    pub state_scale: f64,
    pub locality_scale: f64,
    pub prefix_scale: f64,
    pub switch_x: f64,
    pub transfer_x: f64,
    pub prefix_x: f64,
    /// Per extra shard, as a fraction of the unsharded compute.
    pub shard_overhead: f64,
    /// Weight of the dispatch value added to slot-0 candidates in the frontier problem.
    pub dispatch_weight: f64,
    pub cost_floor: f64,
    pub ablation: Ablation,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            lambda_q: 1.0,
            lambda_s: 1.0,
            lambda_tr: 1.0,
            lambda_c: 0.5,
            lambda_p: 0.5,
            lambda_r: 0.5,
            gamma: 0.5,
            horizon: 4,
            kappa_prefix: 1.0,
            locality_coeff: 0.1,
            state_scale: 1.0,
            locality_scale: 1.0,
            prefix_scale: 1.0,
            switch_x: 1.0,
            transfer_x: 1.0,
            prefix_x: 1.0,
            shard_overhead: 0.05,
            dispatch_weight: 1.0,
            cost_floor: 1e-3,
            ablation: Ablation::default(),
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<(), String> {
        let lambdas = [self.lambda_q, self.lambda_s, self.lambda_tr, self.lambda_c, self.lambda_p, self.lambda_r];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err("lambda weights must be >= 0".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        let mults = [
            self.state_scale,
            self.locality_scale,
            self.prefix_scale,
            self.switch_x,
            self.transfer_x,
            self.prefix_x,
        ];
        if mults.iter().any(|m| !(*m > 0.0)) {
            return Err("scale and perturbation multipliers must be > 0".into());
        }
        if !(self.cost_floor > 0.0) || self.shard_overhead < 0.0 || self.dispatch_weight < 0.0 {
            return Err("cost_floor must be > 0; shard_overhead and dispatch_weight >= 0".into());
        }
        Ok(())
    }

    /// Horizon after ablation; 0 and 1 both mean no tail.
    pub fn effective_horizon(&self) -> u32 {
        if self.ablation.no_future_planning {
            self.horizon.min(1)
        } else {
            self.horizon
        }
    }

    fn lambda_tr(&self) -> f64 {
        if self.ablation.no_locality {
            0.0
        } else {
            self.lambda_tr
        }
    }

    fn lambda_c(&self) -> f64 {
        if self.ablation.no_locality {
            0.0
        } else {
            self.lambda_c
        }
    }

    fn lambda_p(&self) -> f64 {
        if self.ablation.no_prefix {
            0.0
        } else {
            self.lambda_p
        }
    }

    /// `switch_x=2` style label of non-unit perturbation multipliers, or `default`.
    pub fn perturbation_label(&self) -> String {
        let parts: Vec<String> = [("switch_x", self.switch_x), ("transfer_x", self.transfer_x), ("prefix_x", self.prefix_x)]
            .iter()
            .filter(|(_, v)| *v != 1.0)
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        if parts.is_empty() {
            "default".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub base: f64,
    pub wait: f64,
    pub switch: f64,
    pub transfer: f64,
    pub colo: f64,
    pub prefix: f64,
    pub parallel: f64,
    pub corrected_total: f64,
}

/// Realized timing of one shard.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShardTiming {
    pub switch: f64,
    pub transfer: f64,
    pub compute: f64,
    pub duration: f64,
    /// Some query or stage prefix was served from the device's prefix store.
    pub prefix_hit: bool,
}

/// Cost model bound to one workload, platform and weight set.
#[derive(Clone, Debug)]
pub struct CostModel<'a> {
    workload: &'a Workload,
    platform: &'a Platform,
    weights: &'a ScoreWeights,
    base: BTreeMap<StageId, BTreeMap<DeviceId, f64>>,
    mean_base: BTreeMap<StageId, f64>,
    urank: BTreeMap<StageId, f64>,
}

impl<'a> CostModel<'a> {
    pub fn new(workload: &'a Workload, platform: &'a Platform, weights: &'a ScoreWeights) -> Self {
        let mut cm = Self {
            workload,
            platform,
            weights,
            base: BTreeMap::new(),
            mean_base: BTreeMap::new(),
            urank: BTreeMap::new(),
        };
        let dag = workload.dag();
        for s in dag.stages() {
            let per: BTreeMap<DeviceId, f64> = s
                .eligible_devices
                .iter()
                .map(|d| {
                    let qs = workload.stage_queries(&s.id);
                    let c: f64 = qs.iter().map(|q| cm.query_compute(s, q, d, 0, qs.len())).sum();
                    (d.clone(), c)
                })
                .collect();
            let mean = if per.is_empty() { 0.0 } else { per.values().sum::<f64>() / per.len() as f64 };
            cm.mean_base.insert(s.id.clone(), mean);
            cm.base.insert(s.id.clone(), per);
        }
        // Work on the heaviest path through at most `H` levels starting at each stage.
        let levels = weights.effective_horizon().max(1) as usize;
        if let Some(order) = dag.topo_order() {
            let mut prev: BTreeMap<StageId, f64> = BTreeMap::new();
            for _ in 0..levels {
                let mut cur = BTreeMap::new();
                for v in order.iter().rev() {
                    let tail = dag.children(v).iter().map(|w| prev.get(w).copied().unwrap_or(0.0)).fold(0.0, f64::max);
                    cur.insert(v.clone(), cm.mean_base[v] + tail);
                }
                prev = cur;
            }
            cm.urank = prev;
        }
        cm
    }

    pub fn workload(&self) -> &'a Workload {
        self.workload
    }

    pub fn platform(&self) -> &'a Platform {
        self.platform
    }

    pub fn weights(&self) -> &'a ScoreWeights {
        self.weights
    }

    pub fn stage(&self, v: &StageId) -> &'a Stage {
        self.workload.stage(v).unwrap_or_else(|| panic!("unknown stage {v}"))
    }

    pub fn model(&self, stage: &Stage) -> &'a ModelProfile {
        self.platform.models.get(&stage.model).unwrap_or_else(|| panic!("unknown model {}", stage.model))
    }

    fn speed(&self, d: &DeviceId) -> f64 {
        self.platform.topology.device(d).unwrap_or_else(|| panic!("unknown device {d}")).speed_factor
    }

    /// Shard bound after the `no_shard` ablation.
    pub fn shard_bound(&self, v: &StageId) -> u32 {
        if self.weights.ablation.no_shard {
            1
        } else {
            self.stage(v).shard_bound.max(1)
        }
    }

    /// Compute seconds for one query with `saved` prompt tokens served from cache.
    fn query_compute(&self, s: &Stage, q: &Query, d: &DeviceId, saved: u32, batch: usize) -> f64 {
        let m = self.model(s);
        let speed = self.speed(d);
        let prompt = s.prompt_token_proxy + q.prompt_tokens;
        let saved = saved.min(prompt) as f64;
        let scale = s.role.complexity / speed;
        match s.base_cost_override.as_ref().and_then(|o| o.get(d)) {
            Some(&c) => (c / batch.max(1) as f64 - saved / 1000.0 * m.prefill_coeff * s.role.prefill_scale * scale).max(0.0),
            None => {
                let prefill = (prompt as f64 - saved) / 1000.0 * m.prefill_coeff * s.role.prefill_scale;
                let decode = s.output_token_proxy as f64 * m.decode_coeff * s.role.decode_scale;
                (prefill + decode) * scale
            }
        }
    }

    /// Nominal full-batch compute c_v(d), without cache effects.
    pub fn base_cost(&self, v: &StageId, d: &DeviceId) -> f64 {
        match self.base.get(v).and_then(|m| m.get(d)) {
            Some(c) => *c,
            None => {
                let s = self.stage(v);
                let qs = self.workload.stage_queries(v);
                qs.iter().map(|q| self.query_compute(s, q, d, 0, qs.len())).sum()
            }
        }
    }

    pub fn mean_base_cost(&self, v: &StageId) -> f64 {
        self.mean_base.get(v).copied().unwrap_or(0.0)
    }

    /// Heaviest-path work from `v` over at most `H` levels, using mean base costs.
    pub fn upward_work(&self, v: &StageId) -> f64 {
        self.urank.get(v).copied().unwrap_or(0.0)
    }

    /// σ(u, v) in thousands of tokens.
    pub fn sigma(&self, u: &StageId, v: &StageId) -> f64 {
        self.stage(u).output_token_proxy as f64 * self.stage(v).role.comm_weight / 1000.0
    }

    pub fn switch_time(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        let s = self.stage(v);
        if state.residency(d) == Some(&s.model) {
            0.0
        } else {
            self.model(s).switch_penalty * self.weights.switch_x
        }
    }

    /// Transfer seconds for the parents' outputs that `shard` needs on `d`.
    pub fn transfer_time(&self, v: &StageId, d: &DeviceId, shard: Option<&BTreeSet<&QueryId>>, state: &ExecutionState) -> f64 {
        let topo = &self.platform.topology;
        let mut total = 0.0;
        for u in self.workload.dag().parents(v) {
            let Some(locs) = state.parent_loc(u) else { continue };
            let sigma = self.sigma(u, v);
            let need: usize = match shard {
                Some(s) => s.len(),
                None => locs.iter().map(|l| l.queries.len()).sum(),
            };
            if need == 0 {
                continue;
            }
            for l in locs.iter().filter(|l| &l.device != d) {
                let n = match shard {
                    Some(s) => l.queries.iter().filter(|q| s.contains(q)).count(),
                    None => l.queries.len(),
                };
                total += topo.beta(&l.device, d) * sigma * n as f64 / need as f64;
            }
        }
        total * self.weights.transfer_x
    }

    /// Fraction of parents' outputs already on `d`; 0 without parents.
    pub fn colocation(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        let parents = self.workload.dag().parents(v);
        if parents.is_empty() {
            return 0.0;
        }
        let mut sum = 0.0;
        for u in parents {
            if let Some(locs) = state.parent_loc(u) {
                let total: usize = locs.iter().map(|l| l.queries.len()).sum();
                let here: usize = locs.iter().filter(|l| &l.device == d).map(|l| l.queries.len()).sum();
                if total > 0 {
                    sum += here as f64 / total as f64;
                }
            }
        }
        sum / parents.len() as f64
    }

    /// Cached thousands of tokens on `d` usable by `v`: stage-group tokens plus
    /// the mean per-query cached query-group prefix.
    pub fn overlap(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        let s = self.stage(v);
        let stage_tokens = s
            .shared_prefix_group
            .as_ref()
            .and_then(|g| state.cached_tokens(d, g, &s.model))
            .map(|t| t.min(s.prompt_token_proxy))
            .unwrap_or(0);
        let qs = self.workload.stage_queries(v);
        let q_tokens: f64 = if qs.is_empty() {
            0.0
        } else {
            qs.iter()
                .filter_map(|q| {
                    let g = q.prefix_group.as_ref()?;
                    state.cached_tokens(d, g, &s.model).map(|_| q.prefix_tokens as f64)
                })
                .sum::<f64>()
                / qs.len() as f64
        };
        (stage_tokens as f64 + q_tokens) / 1000.0
    }

    fn idle_others(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> usize {
        self.stage(v)
            .eligible_devices
            .iter()
            .filter(|e| *e != d && state.device_free(e) <= state.clock())
            .count()
    }

    fn parallel_term(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        let n = self.workload.stage_queries(v).len();
        let k = (self.shard_bound(v) as usize).min(1 + self.idle_others(v, d, state)).min(n);
        if k <= 1 {
            return 0.0;
        }
        let c = self.base_cost(v, d);
        let k = k as f64;
        (c * (1.0 - 1.0 / k) - self.weights.shard_overhead * c * (k - 1.0)).max(0.0)
    }

    fn check_eligible(&self, v: &StageId, d: &DeviceId) {
        assert!(self.stage(v).eligible_devices.contains(d), "device {d} is not eligible for stage {v}");
    }

    pub fn score_terms(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> CostBreakdown {
        self.check_eligible(v, d);
        let w = self.weights;
        let base = self.base_cost(v, d);
        let wait = (state.device_free(d) - state.clock()).max(0.0);
        let switch = self.switch_time(v, d, state);
        let transfer = self.transfer_time(v, d, None, state);
        let colo = self.colocation(v, d, state);
        let prefix = w.kappa_prefix * self.overlap(v, d, state) * w.prefix_x;
        let parallel = self.parallel_term(v, d, state);
        let corrected = base + switch + transfer - prefix - w.locality_coeff * colo * base - parallel;
        CostBreakdown {
            base,
            wait,
            switch,
            transfer,
            colo,
            prefix,
            parallel,
            corrected_total: corrected.max(w.cost_floor),
        }
    }

    pub fn corrected_cost(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        self.score_terms(v, d, state).corrected_total
    }

    pub fn sched_score_from(&self, t: &CostBreakdown) -> f64 {
        let w = self.weights;
        -w.lambda_q * t.wait - w.lambda_s * t.switch * w.state_scale - w.lambda_tr() * t.transfer * w.locality_scale
            + w.lambda_c() * t.colo * w.locality_scale
            + w.lambda_p() * t.prefix * w.prefix_scale
            + w.lambda_r * t.parallel
    }

    pub fn sched_score(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        self.sched_score_from(&self.score_terms(v, d, state))
    }

    /// Ψ for slot `k` of `v` on `d`.
    pub fn plan_score(&self, v: &StageId, k: u32, d: &DeviceId, state: &ExecutionState) -> f64 {
        assert!(k < self.shard_bound(v), "slot {k} out of range for stage {v}");
        if k == 0 {
            self.sched_score(v, d, state) + self.tail(v, d, state)
        } else {
            self.shard_margin(v, k, d, state)
        }
    }

    fn overhead_and_compute(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> (f64, f64) {
        let wait = (state.device_free(d) - state.clock()).max(0.0);
        let o = wait + self.switch_time(v, d, state) + self.transfer_time(v, d, None, state);
        (o, self.base_cost(v, d))
    }

    /// Finish-time reduction from adding slot `k` on `d`, minus the per-shard overhead
    /// and any displaced residency.
    pub fn shard_margin(&self, v: &StageId, k: u32, d: &DeviceId, state: &ExecutionState) -> f64 {
        self.check_eligible(v, d);
        let best_other = self
            .stage(v)
            .eligible_devices
            .iter()
            .filter(|e| *e != d)
            .map(|e| self.overhead_and_compute(v, e, state))
            .min_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)));
        let Some((o_star, c_star)) = best_other else { return f64::NEG_INFINITY };
        let (o_d, c_d) = self.overhead_and_compute(v, d, state);
        let k = k as f64;
        let f_k = o_star + c_star / k;
        let f_next = (o_star + c_star / (k + 1.0)).max(o_d + c_d / (k + 1.0));
        f_k - f_next - self.weights.shard_overhead * c_star - self.displacement(v, d, state)
    }

    /// Discounted downstream alignment of placing `v` on `d`.
    pub fn tail(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        let h = self.weights.effective_horizon();
        if h <= 1 {
            return 0.0;
        }
        let w = self.weights;
        let ab = w.ablation;
        let dag = self.workload.dag();
        let s = self.stage(v);
        let topo = &self.platform.topology;
        let share = |x: &StageId| self.share(x, d);
        let desc = dag.descendants(v);
        let mut total = 0.0;
        for l in 1..h {
            let at: Vec<&StageId> = desc.iter().filter(|(off, _)| *off == l).map(|(_, id)| id).collect();
            if at.is_empty() {
                continue;
            }
            let mut aff = 0.0;
            if !ab.no_same_model {
                let f = at.iter().filter(|x| self.stage(x).model == s.model).map(|x| share(x)).fold(0.0, f64::max);
                aff += f * self.model(s).switch_penalty * w.switch_x * w.state_scale;
            }
            if !ab.no_prefix {
                if let Some(g) = &s.shared_prefix_group {
                    let tokens = at
                        .iter()
                        .map(|x| self.stage(x))
                        .filter(|x| x.shared_prefix_group.as_ref() == Some(g))
                        .map(|x| x.prompt_token_proxy as f64 * share(&x.id))
                        .fold(0.0, f64::max);
                    aff += w.kappa_prefix * tokens / 1000.0 * w.prefix_x * w.prefix_scale;
                }
            }
            if l == 1 && !ab.no_locality {
                for x in &at {
                    let sigma_vx = self.sigma(v, x);
                    for u in dag.parents(x).iter().filter(|u| *u != v) {
                        let Some(locs) = state.parent_loc(u) else { continue };
                        let held: usize = locs.iter().map(|l| l.queries.len()).sum();
                        let sigma_ux = self.sigma(u, x);
                        for loc in locs.iter().filter(|loc| &loc.device != d) {
                            let frac = loc.queries.len() as f64 / held.max(1) as f64;
                            let pull = topo.beta(&loc.device, d) * sigma_ux;
                            let push = topo.beta(d, &loc.device) * sigma_vx;
                            aff -= pull.min(push) * frac * w.transfer_x * w.locality_scale;
                        }
                    }
                }
            }
            total += w.gamma.powi(l as i32) * aff;
        }
        total - self.displacement(v, d, state)
    }

    /// Chance that `x` runs on `d`, uniform over its eligible set.
    fn share(&self, x: &StageId, d: &DeviceId) -> f64 {
        let e = &self.stage(x).eligible_devices;
        if e.contains(d) {
            1.0 / e.len() as f64
        } else {
            0.0
        }
    }

    /// Discounted continuation value lost by displacing the model resident on
    /// `d` when a descendant of `v` still needs it. Split over resident copies.
    pub fn displacement(&self, v: &StageId, d: &DeviceId, state: &ExecutionState) -> f64 {
        let w = self.weights;
        let h = w.effective_horizon();
        if h <= 1 || w.ablation.no_same_model {
            return 0.0;
        }
        let s = self.stage(v);
        let Some(m0) = state.residency(d).filter(|m0| **m0 != s.model) else { return 0.0 };
        let Some(profile) = self.platform.models.get(m0) else { return 0.0 };
        let copies = state.devices().filter(|e| state.residency(e) == Some(m0)).count().max(1);
        let desc = self.workload.dag().descendants(v);
        let mut total = 0.0;
        for l in 1..h {
            let f = desc
                .iter()
                .filter(|(off, x)| *off == l && &self.stage(x).model == m0)
                .any(|(_, x)| self.stage(x).eligible_devices.contains(d));
            total += w.gamma.powi(l as i32) * f64::from(u8::from(f));
        }
        total / copies as f64 * profile.switch_penalty * w.switch_x * w.state_scale
    }

    /// Value added to slot-0 candidates in the frontier problem: remaining
    /// critical-path work, less the device's compute excess over the stage mean.
    pub fn dispatch_value(&self, v: &StageId, d: &DeviceId) -> f64 {
        self.weights.dispatch_weight * (self.upward_work(v) + self.mean_base_cost(v) - self.base_cost(v, d))
    }

    /// Per-shard realized timing at the current state.
    pub fn realized_duration(
        &self,
        v: &StageId,
        shards: &[(DeviceId, Vec<QueryId>)],
        state: &ExecutionState,
    ) -> Result<Vec<ShardTiming>, ExecError> {
        let s = self.stage(v);
        let all = self.workload.stage_queries(v);
        let mut seen = BTreeSet::new();
        for (d, qs) in shards {
            self.check_eligible(v, d);
            for q in qs {
                if !seen.insert(q) {
                    return Err(ExecError::InvalidAssignment {
                        policy: String::new(),
                        detail: format!("query {q} appears in two shards of {v}"),
                    });
                }
            }
        }
        let w = self.weights;
        let mut out = Vec::with_capacity(shards.len());
        for (d, qs) in shards {
            let shard: BTreeSet<&QueryId> = qs.iter().collect();
            let stage_saved = s
                .shared_prefix_group
                .as_ref()
                .and_then(|g| state.cached_tokens(d, g, &s.model))
                .map(|t| t.min(s.prompt_token_proxy))
                .unwrap_or(0);
            let mut hit = stage_saved > 0;
            let mut seen_groups = BTreeSet::new();
            let mut compute = 0.0;
            for qid in qs {
                let q = self
                    .workload
                    .query(v, qid)
                    .ok_or_else(|| ExecError::InvalidAssignment { policy: String::new(), detail: format!("unknown query {qid} for {v}") })?;
                let mut saved = stage_saved;
                if let Some(g) = &q.prefix_group {
                    let cached = state.cached_tokens(d, g, &s.model).is_some();
                    hit |= cached && q.prefix_tokens > 0;
                    if cached || seen_groups.contains(g) {
                        saved += q.prefix_tokens;
                    }
                    seen_groups.insert(g.clone());
                }
                let saved = (saved as f64 * w.prefix_x).round() as u32;
                compute += self.query_compute(s, q, d, saved, all.len());
            }
            let switch = self.switch_time(v, d, state);
            let transfer = self.transfer_time(v, d, Some(&shard), state);
            out.push(ShardTiming { switch, transfer, compute, duration: switch + transfer + compute, prefix_hit: hit });
        }
        Ok(out)
    }

    /// Projected duration of a committed shard, without cache effects.
    pub fn estimate_duration(&self, v: &StageId, d: &DeviceId, fraction: f64, resident_after: Option<&crate::ids::ModelAlias>, state: &ExecutionState) -> f64 {
        let s = self.stage(v);
        let switch = if resident_after == Some(&s.model) { 0.0 } else { self.model(s).switch_penalty * self.weights.switch_x };
        switch + self.transfer_time(v, d, None, state) + self.base_cost(v, d) * fraction
    }
}
