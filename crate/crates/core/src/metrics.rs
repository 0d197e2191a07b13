//! Latency percentiles, normalization against a baseline, pooled mechanism
//! rates, ECDF points and family breakdowns.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Nearest-rank percentile: the value at 1-based index ⌈p·n⌉ of the ascending sort.
pub fn nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[idx - 1])
}

/// Panics on empty input.
pub fn p95_latency(completions: &[f64]) -> f64 {
    nearest_rank(completions, 0.95).expect("p95 of an empty set")
}

/// exp of the mean log ratio. Panics on nonpositive input.
pub fn geo_mean_normalized(pairs: &[(f64, f64)]) -> f64 {
    assert!(!pairs.is_empty(), "geometric mean of an empty set");
    let ratios: Vec<f64> = pairs
        .iter()
        .map(|&(v, b)| {
            assert!(v > 0.0 && b > 0.0, "nonpositive value in geometric mean: ({v}, {b})");
            v / b
        })
        .collect();
    if ratios.iter().all(|r| *r == ratios[0]) {
        return ratios[0];
    }
    geo_mean(&ratios)
}

pub fn geo_mean(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "geometric mean of an empty set");
    if values.iter().all(|r| *r == values[0]) {
        return values[0];
    }
    (values.iter().map(|r| r.ln()).sum::<f64>() / values.len() as f64).exp()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MechanismCounts {
    pub workflow_tasks: u64,
    pub cross_device_parent_edges: u64,
    pub prefix_cache_hits_est: u64,
    pub same_model_continuations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismRates {
    pub xdev_edge: f64,
    pub cache_score: f64,
    pub model_cont: f64,
}

/// Pooled ratios: summed counters over summed tasks. Panics when no tasks.
pub fn mechanism_rates(rows: &[MechanismCounts]) -> MechanismRates {
    let tasks: u64 = rows.iter().map(|r| r.workflow_tasks).sum();
    assert!(tasks > 0, "mechanism rates over zero tasks");
    let t = tasks as f64;
    MechanismRates {
        xdev_edge: rows.iter().map(|r| r.cross_device_parent_edges).sum::<u64>() as f64 / t,
        cache_score: rows.iter().map(|r| r.prefix_cache_hits_est).sum::<u64>() as f64 / t,
        model_cont: rows.iter().map(|r| r.same_model_continuations).sum::<u64>() as f64 / t,
    }
}

/// Sorted unique values with cumulative fraction k/n.
pub fn ecdf_points(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = frac,
            _ => out.push((*x, frac)),
        }
    }
    out
}

/// One executed run, as read back from a results CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub workflow_id: String,
    pub family: String,
    pub batch_size: usize,
    pub seed: u64,
    pub perturbation: String,
    pub makespan: f64,
    pub p95: f64,
    pub counts: MechanismCounts,
}

impl RunSummary {
    /// Pairing key with the baseline run.
    pub fn instance_key(&self) -> (String, usize, u64, String) {
        (self.workflow_id.clone(), self.batch_size, self.seed, self.perturbation.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub workflow_id: String,
    pub family: String,
    pub batch_size: usize,
    pub seed: u64,
    pub perturbation: String,
    pub makespan: f64,
    pub p95: f64,
    pub norm_makespan: f64,
    pub norm_p95: f64,
    pub xdev_edge: f64,
    pub cache_score: f64,
    pub model_cont: f64,
}

/// Normalizes every run against the baseline run of the same instance key.
pub fn normalize(runs: &[RunSummary], baseline: &str) -> Result<Vec<MetricRow>, String> {
    let base: BTreeMap<_, &RunSummary> =
        runs.iter().filter(|r| r.method == baseline).map(|r| (r.instance_key(), r)).collect();
    runs.iter()
        .map(|r| {
            let b = base
                .get(&r.instance_key())
                .ok_or_else(|| format!("no {baseline} run for {} batch {} seed {}", r.workflow_id, r.batch_size, r.seed))?;
            let t = r.counts.workflow_tasks.max(1) as f64;
            Ok(MetricRow {
                method: r.method.clone(),
                workflow_id: r.workflow_id.clone(),
                family: r.family.clone(),
                batch_size: r.batch_size,
                seed: r.seed,
                perturbation: r.perturbation.clone(),
                makespan: r.makespan,
                p95: r.p95,
                norm_makespan: r.makespan / b.makespan,
                norm_p95: r.p95 / b.p95,
                xdev_edge: r.counts.cross_device_parent_edges as f64 / t,
                cache_score: r.counts.prefix_cache_hits_est as f64 / t,
                model_cont: r.counts.same_model_continuations as f64 / t,
            })
        })
        .collect()
}

/// Per-method aggregate over normalized rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub instances: usize,
    pub norm_makespan: f64,
    pub norm_p95: f64,
    pub rates: MechanismRates,
}

pub fn summarize(method: &str, rows: &[MetricRow], runs: &[RunSummary]) -> Option<MethodSummary> {
    let mine: Vec<&MetricRow> = rows.iter().filter(|r| r.method == method).collect();
    if mine.is_empty() {
        return None;
    }
    let counts: Vec<MechanismCounts> = runs.iter().filter(|r| r.method == method).map(|r| r.counts).collect();
    Some(MethodSummary {
        method: method.to_string(),
        instances: mine.len(),
        norm_makespan: geo_mean(&mine.iter().map(|r| r.norm_makespan).collect::<Vec<_>>()),
        norm_p95: geo_mean(&mine.iter().map(|r| r.norm_p95).collect::<Vec<_>>()),
        rates: mechanism_rates(&counts),
    })
}

/// Completion outcome of one (method, instance) cell; `ratio` is None when the run did not complete.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyCell {
    pub method: String,
    pub instance: String,
    pub family: String,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FamilyBreakdown {
    /// family → method → geometric mean over the strict intersection.
    pub table: BTreeMap<String, BTreeMap<String, f64>>,
    pub warnings: Vec<String>,
}

/// Per-family geometric means over instances completed by every method.
pub fn family_breakdown(cells: &[FamilyCell], methods: &[String]) -> FamilyBreakdown {
    let mut out = FamilyBreakdown::default();
    let families: BTreeSet<&String> = cells.iter().map(|c| &c.family).collect();
    for fam in families {
        let of_family: Vec<&FamilyCell> = cells.iter().filter(|c| &c.family == fam).collect();
        let instances: BTreeSet<&String> = of_family.iter().map(|c| &c.instance).collect();
        let complete: BTreeSet<&String> = instances
            .into_iter()
            .filter(|i| {
                methods.iter().all(|m| of_family.iter().any(|c| &c.instance == *i && &c.method == m && c.ratio.is_some()))
            })
            .collect();
        if complete.is_empty() {
            out.warnings.push(format!("family {fam} has no instance completed by every method; omitted"));
            continue;
        }
        let mut per = BTreeMap::new();
        for m in methods {
            let ratios: Vec<f64> = of_family
                .iter()
                .filter(|c| &c.method == m && complete.contains(&c.instance))
                .filter_map(|c| c.ratio)
                .collect();
            per.insert(m.clone(), geo_mean(&ratios));
        }
        out.table.insert(fam.clone(), per);
    }
    out
}
