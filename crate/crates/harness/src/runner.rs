//! Manifest execution: expand the matrix, run cells in parallel, write sorted CSVs
//! and the provenance index.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wfsched_core::cost::ScoreWeights;
use wfsched_core::executor::{check_conservation, run, ExecConfig, RunRecord};
use wfsched_core::policy::{make_policy, BeamConfig};
use wfsched_core::workflow::{Platform, WorkflowInstance, Workload};

use crate::config::Config;
use crate::error::{write, HarnessError, Result};
use crate::manifest::{ExperimentKind, Manifest, SeededInstance, Variant};
use crate::schema::{rows_to_csv, run_id, timings_to_csv, CsvRow, TimingRow};

pub const INDEX_FILE: &str = "index.json";

/// Runs one instance under one method and checks conservation.
pub fn execute(
    instance: &WorkflowInstance,
    method: &str,
    platform: &Platform,
    weights: &ScoreWeights,
    beam: BeamConfig,
    seed: u64,
    trace: bool,
) -> std::result::Result<RunRecord, String> {
    let mut policy = make_policy(method, beam).ok_or_else(|| format!("unknown method {method}"))?;
    let workload = Workload::single(instance);
    let record = run(policy.as_mut(), &workload, platform, weights, seed, &ExecConfig { trace })
        .map_err(|e| e.to_string())?;
    check_conservation(&record, &workload).map_err(|e| format!("conservation: {e}"))?;
    Ok(record)
}

struct Cell<'a> {
    experiment: &'a str,
    method: &'a str,
    variant: Variant,
    instance: &'a SeededInstance,
}

struct CellOutput {
    row: CsvRow,
    times: Vec<f64>,
}

fn run_cell(cell: &Cell<'_>, cfg: &Config, platform: &Platform) -> Result<CellOutput> {
    let inst = &cell.instance.instance;
    let id = run_id(
        cell.experiment,
        cell.method,
        &cell.variant.label,
        inst.dag.workflow_id(),
        inst.batch_size,
        cell.instance.seed,
    );
    let weights = cell.variant.weights(&cfg.weights);
    let record = execute(inst, cell.method, platform, &weights, cfg.beam, cell.instance.seed, false)
        .map_err(|detail| HarnessError::Run { run_id: id.clone(), detail })?;
    Ok(CellOutput { times: record.solver.times.clone(), row: CsvRow::from_record(id, &record) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexCell {
    pub method: String,
    pub variant: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub path: String,
    pub experiment: String,
    pub kind: ExperimentKind,
    /// `results` or `solver_timing`.
    pub role: String,
    /// False for wall-clock data.
    pub deterministic: bool,
    pub rows: usize,
    pub cells: Vec<IndexCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub manifest: String,
    pub files: Vec<IndexEntry>,
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub files: Vec<PathBuf>,
    /// Rows per experiment.
    pub rows: BTreeMap<String, usize>,
    /// Runs that passed the conservation check.
    pub conservation_checked: usize,
    pub elapsed_s: f64,
}

/// Worker count: cells capped at host cores.
pub fn default_jobs(cells: usize) -> usize {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    cells.clamp(1, cores)
}

pub fn run_manifest(manifest: &Manifest, jobs: Option<usize>) -> Result<RunReport> {
    let start = Instant::now();
    manifest.validate()?;
    let cfg = manifest.load_config()?;
    let platform = cfg.platform().map_err(HarnessError::Config)?;
    let instances: Vec<Vec<SeededInstance>> = manifest
        .experiments
        .iter()
        .map(|e| manifest.instances(e, &platform, &cfg))
        .collect::<Result<_>>()?;
    let mut cells = Vec::new();
    for (e, insts) in manifest.experiments.iter().zip(&instances) {
        for method in e.methods(manifest) {
            for variant in e.variants(method) {
                for instance in insts {
                    cells.push(Cell { experiment: &e.name, method, variant: variant.clone(), instance });
                }
            }
        }
    }
    let jobs = jobs.unwrap_or_else(|| default_jobs(cells.len())).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Manifest(format!("thread pool: {e}")))?;
    let outputs: Vec<CellOutput> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, &cfg, &platform)).collect::<Result<_>>())?;

    let out_dir = manifest.output_dir();
    let mut report = RunReport { conservation_checked: outputs.len(), ..Default::default() };
    let mut by_exp: BTreeMap<&str, Vec<&CellOutput>> = BTreeMap::new();
    for (c, o) in cells.iter().zip(&outputs) {
        by_exp.entry(c.experiment).or_default().push(o);
    }
    let mut index = Index { manifest: manifest.name.clone(), files: Vec::new() };
    for e in &manifest.experiments {
        let mut outs = by_exp.remove(e.name.as_str()).unwrap_or_default();
        outs.sort_by(|a, b| a.row.run_id.cmp(&b.row.run_id));
        let rows: Vec<CsvRow> = outs.iter().map(|o| o.row.clone()).collect();
        let timings: Vec<TimingRow> = outs
            .iter()
            .flat_map(|o| {
                o.times.iter().enumerate().map(|(i, t)| TimingRow { run_id: o.row.run_id.clone(), solve: i as u64, time_s: *t })
            })
            .collect();
        let mut cells: BTreeMap<(String, String), usize> = BTreeMap::new();
        for r in &rows {
            *cells.entry((r.method.clone(), r.variant().to_string())).or_default() += 1;
        }
        let cells: Vec<IndexCell> =
            cells.into_iter().map(|((method, variant), rows)| IndexCell { method, variant, rows }).collect();
        for (name, text, role, deterministic, n) in [
            (e.csv_name(), rows_to_csv(&rows), "results", true, rows.len()),
            (e.timing_name(), timings_to_csv(&timings), "solver_timing", false, timings.len()),
        ] {
            let path = out_dir.join(&name);
            write(&path, text)?;
            report.files.push(path);
            index.files.push(IndexEntry {
                path: name,
                experiment: e.name.clone(),
                kind: e.kind,
                role: role.into(),
                deterministic,
                rows: n,
                cells: cells.clone(),
            });
        }
        report.rows.insert(e.name.clone(), rows.len());
    }
    index.files.sort_by(|a, b| a.path.cmp(&b.path));
    let index_path = out_dir.join(INDEX_FILE);
    write(&index_path, serde_json::to_string_pretty(&index).expect("index serializes") + "\n")?;
    report.elapsed_s = start.elapsed().as_secs_f64();
    Ok(report)
}
