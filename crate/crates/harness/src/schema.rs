//! Results CSV layout and the solver timing sidecar.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wfsched_core::executor::RunRecord;
use wfsched_core::metrics::{MechanismCounts, RunSummary};

use crate::error::{HarnessError, Result};

pub const COLUMNS: [&str; 20] = [
    "run_id",
    "method",
    "workflow_id",
    "family",
    "batch_size",
    "seed",
    "makespan_s",
    "p95_latency_s",
    "workflow_tasks",
    "cross_device_parent_edges",
    "prefix_cache_hits_est",
    "same_model_continuations",
    "solver_solves",
    "solver_optimal",
    "solver_time_mean_s",
    "solver_time_p95_s",
    "solver_time_max_s",
    "ablation_flags",
    "perturbation",
    "h_value",
];

pub const TIMING_COLUMNS: [&str; 3] = ["run_id", "solve", "time_s"];

/// Seconds are written with this many decimals.
pub const DECIMALS: usize = 6;

/// `{experiment}:{method}:{variant}:{workflow}:{batch}:{seed}`.
pub fn run_id(experiment: &str, method: &str, variant: &str, workflow: &str, batch: usize, seed: u64) -> String {
    format!("{experiment}:{method}:{variant}:{workflow}:{batch}:{seed}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub method: String,
    pub workflow_id: String,
    pub family: String,
    pub batch_size: usize,
    pub seed: u64,
    pub makespan_s: f64,
    pub p95_latency_s: f64,
    pub workflow_tasks: u64,
    pub cross_device_parent_edges: u64,
    pub prefix_cache_hits_est: u64,
    pub same_model_continuations: u64,
    pub solver_solves: u64,
    pub solver_optimal: u64,
    /// Wall-clock columns stay empty here; the values live in the timing sidecar.
    pub solver_time_mean_s: Option<f64>,
    pub solver_time_p95_s: Option<f64>,
    pub solver_time_max_s: Option<f64>,
    pub ablation_flags: String,
    pub perturbation: String,
    pub h_value: u32,
}

impl CsvRow {
    pub fn from_record(run_id: String, r: &RunRecord) -> Self {
        let round = |x: f64| format!("{x:.DECIMALS$}").parse::<f64>().expect("formatted float parses");
        Self {
            run_id,
            method: r.method.clone(),
            workflow_id: r.workflow_id.clone(),
            family: r.family.clone(),
            batch_size: r.batch_size,
            seed: r.seed,
            makespan_s: round(r.makespan),
            p95_latency_s: round(r.p95_latency()),
            workflow_tasks: r.counts.workflow_tasks,
            cross_device_parent_edges: r.counts.cross_device_parent_edges,
            prefix_cache_hits_est: r.counts.prefix_cache_hits_est,
            same_model_continuations: r.counts.same_model_continuations,
            solver_solves: r.solver.solves,
            solver_optimal: r.solver.optimal,
            solver_time_mean_s: None,
            solver_time_p95_s: None,
            solver_time_max_s: None,
            ablation_flags: if r.ablation_flags.is_empty() { "none".into() } else { r.ablation_flags.clone() },
            perturbation: r.perturbation.clone(),
            h_value: r.h_value,
        }
    }

    /// Variant part of the run id.
    pub fn variant(&self) -> &str {
        self.run_id.split(':').nth(2).unwrap_or("")
    }

    pub fn experiment(&self) -> &str {
        self.run_id.split(':').next().unwrap_or("")
    }

    pub fn counts(&self) -> MechanismCounts {
        MechanismCounts {
            workflow_tasks: self.workflow_tasks,
            cross_device_parent_edges: self.cross_device_parent_edges,
            prefix_cache_hits_est: self.prefix_cache_hits_est,
            same_model_continuations: self.same_model_continuations,
        }
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            method: self.method.clone(),
            workflow_id: self.workflow_id.clone(),
            family: self.family.clone(),
            batch_size: self.batch_size,
            seed: self.seed,
            perturbation: self.perturbation.clone(),
            makespan: self.makespan_s,
            p95: self.p95_latency_s,
            counts: self.counts(),
        }
    }

    fn fields(&self) -> Vec<String> {
        let secs = |x: f64| format!("{x:.DECIMALS$}");
        let opt = |x: Option<f64>| x.map(secs).unwrap_or_default();
        vec![
            self.run_id.clone(),
            self.method.clone(),
            self.workflow_id.clone(),
            self.family.clone(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            secs(self.makespan_s),
            secs(self.p95_latency_s),
            self.workflow_tasks.to_string(),
            self.cross_device_parent_edges.to_string(),
            self.prefix_cache_hits_est.to_string(),
            self.same_model_continuations.to_string(),
            self.solver_solves.to_string(),
            self.solver_optimal.to_string(),
            opt(self.solver_time_mean_s),
            opt(self.solver_time_p95_s),
            opt(self.solver_time_max_s),
            self.ablation_flags.clone(),
            self.perturbation.clone(),
            self.h_value.to_string(),
        ]
    }
}

/// Header plus rows in the given order.
pub fn rows_to_csv(rows: &[CsvRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn read_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let parse = |detail: String| HarnessError::Parse { path: path.to_path_buf(), detail };
    let mut r = csv::Reader::from_path(path).map_err(|e| parse(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| parse(e.to_string()))?.iter().map(String::from).collect();
    if header != COLUMNS {
        return Err(parse(format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e| parse(e.to_string()))).collect()
}

/// One solver wall time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub run_id: String,
    pub solve: u64,
    pub time_s: f64,
}

pub fn timings_to_csv(rows: &[TimingRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(TIMING_COLUMNS).expect("in-memory write");
    for r in rows {
        w.write_record([r.run_id.clone(), r.solve.to_string(), format!("{:.9}", r.time_s)]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn read_timings(path: &Path) -> Result<Vec<TimingRow>> {
    let parse = |detail: String| HarnessError::Parse { path: path.to_path_buf(), detail };
    let mut r = csv::Reader::from_path(path).map_err(|e| parse(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| parse(e.to_string()))).collect()
}
