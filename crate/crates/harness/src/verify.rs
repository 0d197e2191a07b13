//! Self-checks behind `wfsched verify`: the frontier solver against exhaustive
//! enumeration, and the metric formulas on fixed examples.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfsched_core::metrics::{geo_mean_normalized, mechanism_rates, nearest_rank, normalize, MechanismCounts, RunSummary};
use wfsched_core::planner::{solve_frontier, Candidate, FrontierProblem, DEFAULT_BUDGET};
use wfsched_core::task::Placement;
use wfsched_core::{DeviceId, StageId};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// At most 5 stages, 4 devices and 2 slots; about a fifth of the scores tie at 1.0.
pub fn random_problem(seed: u64) -> FrontierProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_stages = rng.gen_range(1..=5);
    let n_dev = rng.gen_range(1..=4);
    let mut stages = BTreeMap::new();
    let mut cands = Vec::new();
    for s in 0..n_stages {
        let stage = StageId::new(format!("s{s}"));
        let r = rng.gen_range(1..=2u32);
        stages.insert(stage.clone(), r);
        for k in 0..r {
            for d in 0..n_dev {
                if rng.gen_bool(0.8) {
                    let psi = if rng.gen_bool(0.2) { 1.0 } else { rng.gen_range(-5.0..10.0) };
                    let bonus = if k == 0 && rng.gen_bool(0.5) { rng.gen_range(0.0..3.0) } else { 0.0 };
                    cands.push(Candidate { stage: stage.clone(), slot: k, device: DeviceId::new(format!("d{d}")), psi, bonus });
                }
            }
        }
    }
    let devices = (0..n_dev).map(|d| DeviceId::new(format!("d{d}"))).collect();
    FrontierProblem::new(stages, devices, cands)
}

/// One stage per device, one device per slot, slots contiguous from 0, and
/// every placement backed by a candidate.
pub fn feasible(problem: &FrontierProblem, sel: &[Placement]) -> bool {
    let devices: BTreeSet<&DeviceId> = sel.iter().map(|p| &p.device).collect();
    let slots: BTreeSet<(&StageId, u32)> = sel.iter().map(|p| (&p.stage, p.slot)).collect();
    devices.len() == sel.len()
        && slots.len() == sel.len()
        && sel.iter().all(|p| p.slot == 0 || slots.contains(&(&p.stage, p.slot - 1)))
        && sel.iter().all(|p| problem.candidates.iter().any(|c| c.placement() == *p))
}

/// Objective of a selection, summed in sorted placement order.
pub fn objective(problem: &FrontierProblem, sel: &[Placement]) -> f64 {
    let mut sorted = sel.to_vec();
    sorted.sort();
    sorted
        .iter()
        .map(|p| problem.candidates.iter().find(|c| c.placement() == *p).map(Candidate::value).unwrap_or(f64::NAN))
        .sum()
}

/// Best objective over every per-device choice of one candidate or none.
pub fn brute_force(problem: &FrontierProblem) -> f64 {
    let per: Vec<Vec<&Candidate>> = problem
        .devices
        .iter()
        .map(|d| problem.candidates.iter().filter(|c| &c.device == d).collect())
        .collect();
    let mut best = 0.0f64;
    let mut idx = vec![0usize; per.len()];
    loop {
        let sel: Vec<Placement> =
            idx.iter().zip(&per).filter(|(i, _)| **i > 0).map(|(i, cs)| cs[i - 1].placement()).collect();
        if feasible(problem, &sel) {
            best = best.max(objective(problem, &sel));
        }
        let mut j = 0;
        while j < idx.len() {
            idx[j] += 1;
            if idx[j] <= per[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == idx.len() {
            return best;
        }
    }
}

/// Solver matches enumeration exactly on `count` random problems, within `budget_s`.
pub fn solver_oracle(count: u64, budget_s: f64) -> Check {
    let start = Instant::now();
    let mut failures = Vec::new();
    for seed in 0..count {
        let p = random_problem(seed);
        let s = solve_frontier(&p, DEFAULT_BUDGET);
        let want = brute_force(&p);
        if !s.optimal || s.objective != want || !feasible(&p, &s.selected) || objective(&p, &s.selected) != s.objective {
            failures.push(format!("seed {seed}: solver {} vs enumeration {want}", s.objective));
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let passed = failures.is_empty() && elapsed < budget_s;
    let detail = if failures.is_empty() {
        format!("{count} problems match enumeration, constraints hold, {elapsed:.3}s")
    } else {
        format!("{} mismatches, first: {}", failures.len(), failures[0])
    };
    Check { name: "solver optimality oracle".into(), passed, detail }
}

/// Fixed-example checks of the metric formulas.
pub fn metric_examples() -> Vec<Check> {
    let mut out = Vec::new();
    let gm = geo_mean_normalized(&[(0.5, 1.0), (2.0, 1.0)]);
    out.push(Check { name: "geometric mean of {0.5, 2.0}".into(), passed: gm == 1.0, detail: format!("{gm}") });
    let c = |tasks, hits| MechanismCounts { workflow_tasks: tasks, prefix_cache_hits_est: hits, ..Default::default() };
    let pooled = mechanism_rates(&[c(10, 2), c(30, 12)]).cache_score;
    out.push(Check { name: "pooled rate (2+12)/(10+30)".into(), passed: pooled == 0.35, detail: format!("{pooled}") });
    let xs: Vec<f64> = (1..=20).map(f64::from).collect();
    let p95 = nearest_rank(&xs, 0.95);
    out.push(Check { name: "nearest-rank p95 of 1..20".into(), passed: p95 == Some(19.0), detail: format!("{p95:?}") });
    let run = |m: &str, w: &str, ms| RunSummary {
        method: m.into(),
        workflow_id: w.into(),
        family: "f".into(),
        batch_size: 16,
        seed: 1,
        perturbation: "default".into(),
        makespan: ms,
        p95: ms / 2.0,
        counts: MechanismCounts { workflow_tasks: 1, ..Default::default() },
    };
    let rows = normalize(&[run("round_robin", "a", 3.7), run("round_robin", "b", 0.1)], "round_robin").unwrap();
    let ok = rows.iter().all(|r| r.norm_makespan == 1.0 && r.norm_p95 == 1.0);
    out.push(Check { name: "baseline self-normalization".into(), passed: ok, detail: format!("{} rows", rows.len()) });
    out
}
