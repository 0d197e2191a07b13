//! Table export from the manifest-declared CSVs only.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use wfsched_core::metrics::{
    ecdf_points, family_breakdown, nearest_rank, normalize, summarize, FamilyBreakdown, FamilyCell, MethodSummary,
    MetricRow,
};

use crate::error::{read_to_string, write, HarnessError, Result};
use crate::manifest::{Experiment, ExperimentKind, Manifest, BASELINE};
use crate::runner::{Index, INDEX_FILE};
use crate::schema::{read_rows, read_timings, CsvRow, TimingRow};

pub const TABLES_DIR: &str = "tables";

/// Rows of one experiment as read from its declared files.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub experiment: Experiment,
    pub rows: Vec<CsvRow>,
    pub timings: Vec<TimingRow>,
}

/// Reads every declared CSV; anything else in the index is refused.
pub fn load_declared(manifest: &Manifest) -> Result<Vec<ExperimentData>> {
    let dir = manifest.output_dir();
    let declared: BTreeSet<String> = manifest.declared_csvs().into_iter().collect();
    for name in &declared {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(HarnessError::MissingCsv(p));
        }
    }
    let index_path = dir.join(INDEX_FILE);
    if !index_path.is_file() {
        return Err(HarnessError::MissingCsv(index_path));
    }
    let index: Index = serde_json::from_str(&read_to_string(&index_path)?)
        .map_err(|e| HarnessError::Parse { path: index_path.clone(), detail: e.to_string() })?;
    for f in &index.files {
        if !declared.contains(&f.path) {
            return Err(HarnessError::Undeclared(dir.join(&f.path)));
        }
    }
    let listed: BTreeSet<&String> = index.files.iter().map(|f| &f.path).collect();
    if let Some(missing) = declared.iter().find(|d| !listed.contains(d)) {
        return Err(HarnessError::Export(format!("{missing} is declared but absent from {INDEX_FILE}")));
    }
    manifest
        .experiments
        .iter()
        .map(|e| {
            Ok(ExperimentData {
                experiment: e.clone(),
                rows: read_rows(&dir.join(e.csv_name()))?,
                timings: read_timings(&dir.join(e.timing_name()))?,
            })
        })
        .collect()
}

/// Repeat or conflict ratio encoded as the `-r<ratio>` suffix of a workflow id.
pub fn ratio_of(workflow_id: &str) -> Option<f64> {
    workflow_id.rsplit_once("-r").and_then(|(_, r)| r.parse().ok())
}

/// Normalized rows and summary of the picked rows, which must share one method.
/// Pairs come from the baseline rows of the same experiment.
pub fn summary_of(all: &[CsvRow], pick: impl Fn(&CsvRow) -> bool) -> Result<Option<(MethodSummary, Vec<MetricRow>)>> {
    let picked: Vec<&CsvRow> = all.iter().filter(|r| pick(r)).collect();
    let Some(first) = picked.first() else {
        return Ok(None);
    };
    let method = first.method.clone();
    if picked.iter().any(|r| r.method != method) {
        return Err(HarnessError::Export("summary over mixed methods".into()));
    }
    let mut runs: Vec<_> = picked.iter().map(|r| r.summary()).collect();
    let n = runs.len();
    if method != BASELINE {
        runs.extend(all.iter().filter(|r| r.method == BASELINE).map(CsvRow::summary));
    }
    let mut normalized = normalize(&runs, BASELINE).map_err(HarnessError::Export)?;
    normalized.truncate(n);
    let s = summarize(&method, &normalized, &runs[..n]).expect("nonempty");
    Ok(Some((s, normalized)))
}

fn methods_of(manifest: &Manifest, e: &Experiment) -> Vec<String> {
    e.methods(manifest).to_vec()
}

fn plain(r: &CsvRow) -> bool {
    r.variant() == "default"
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioCell {
    pub method: String,
    pub ratio: f64,
    pub norm_makespan: f64,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantCell {
    pub variant: String,
    pub h_value: u32,
    pub summary: MethodSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCell {
    pub perturbation: String,
    pub method: String,
    pub norm_makespan: f64,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverCell {
    pub experiment: String,
    pub solves: u64,
    pub optimal: u64,
    pub time_mean_s: f64,
    pub time_p95_s: f64,
    pub time_max_s: f64,
}

/// Everything the tables show, typed.
#[derive(Clone, Debug, Default)]
pub struct Analysis {
    /// Main experiments: per-method summary in manifest order.
    pub overall: BTreeMap<String, Vec<MethodSummary>>,
    /// Main experiments: normalized rows of every method.
    pub normalized: BTreeMap<String, Vec<MetricRow>>,
    pub families: BTreeMap<String, FamilyBreakdown>,
    /// Prefix and conflict experiments.
    pub ratios: BTreeMap<String, Vec<RatioCell>>,
    /// Ablation and sensitivity experiments: FATE variants.
    pub variants: BTreeMap<String, Vec<VariantCell>>,
    pub perturbations: BTreeMap<String, Vec<PerturbationCell>>,
    pub solver: Vec<SolverCell>,
    pub methods: BTreeMap<String, Vec<String>>,
    pub kinds: BTreeMap<String, ExperimentKind>,
}

pub fn analyze(manifest: &Manifest, data: &[ExperimentData]) -> Result<Analysis> {
    let mut a = Analysis::default();
    let mut all_times = Vec::new();
    let (mut all_solves, mut all_optimal) = (0, 0);
    for d in data {
        let e = &d.experiment;
        let name = e.name.clone();
        let methods = methods_of(manifest, e);
        a.methods.insert(name.clone(), methods.clone());
        a.kinds.insert(name.clone(), e.kind);
        let normalizable = manifest.normalize && methods.iter().any(|m| m == BASELINE);
        match e.kind {
            ExperimentKind::Main if normalizable => {
                let mut sums = Vec::new();
                let mut norm = Vec::new();
                for m in &methods {
                    if let Some((s, rows)) = summary_of(&d.rows, |r| &r.method == m && plain(r))? {
                        sums.push(s);
                        norm.extend(rows);
                    }
                }
                let cells: Vec<FamilyCell> = norm
                    .iter()
                    .map(|r| FamilyCell {
                        method: r.method.clone(),
                        instance: format!("{}:{}:{}", r.workflow_id, r.batch_size, r.seed),
                        family: r.family.clone(),
                        ratio: Some(r.norm_makespan),
                    })
                    .collect();
                a.families.insert(name.clone(), family_breakdown(&cells, &methods));
                a.overall.insert(name.clone(), sums);
                a.normalized.insert(name.clone(), norm);
            }
            ExperimentKind::Prefix | ExperimentKind::Conflict if normalizable => {
                let ratios: BTreeSet<String> =
                    d.rows.iter().filter_map(|r| ratio_of(&r.workflow_id)).map(|r| format!("{r}")).collect();
                let mut ratios: Vec<f64> = ratios.iter().map(|r| r.parse().unwrap()).collect();
                ratios.sort_by(f64::total_cmp);
                let mut cells = Vec::new();
                for m in &methods {
                    for &ratio in &ratios {
                        let pick = |r: &CsvRow| &r.method == m && plain(r) && ratio_of(&r.workflow_id) == Some(ratio);
                        if let Some((s, _)) = summary_of(&d.rows, pick)? {
                            cells.push(RatioCell {
                                method: m.clone(),
                                ratio,
                                norm_makespan: s.norm_makespan,
                                instances: s.instances,
                            });
                        }
                    }
                }
                a.ratios.insert(name.clone(), cells);
            }
            ExperimentKind::Ablation | ExperimentKind::Sensitivity if normalizable => {
                let mut cells = Vec::new();
                for v in e.variants("fate") {
                    let label = v.label.clone();
                    if let Some((s, _)) = summary_of(&d.rows, |r| r.method == "fate" && r.variant() == label)? {
                        let h = d.rows.iter().find(|r| r.method == "fate" && r.variant() == label).unwrap().h_value;
                        cells.push(VariantCell { variant: label, h_value: h, summary: s });
                    }
                }
                a.variants.insert(name.clone(), cells);
            }
            ExperimentKind::Perturbation if normalizable => {
                let mut cells = Vec::new();
                let perts: Vec<String> = e.variants(BASELINE).into_iter().map(|v| v.label).collect();
                for p in &perts {
                    for m in &methods {
                        if let Some((s, _)) = summary_of(&d.rows, |r| &r.method == m && r.variant() == p)? {
                            cells.push(PerturbationCell {
                                perturbation: p.clone(),
                                method: m.clone(),
                                norm_makespan: s.norm_makespan,
                                instances: s.instances,
                            });
                        }
                    }
                }
                a.perturbations.insert(name.clone(), cells);
            }
            _ => {}
        }
        let times: Vec<f64> = d.timings.iter().map(|t| t.time_s).collect();
        let solves: u64 = d.rows.iter().map(|r| r.solver_solves).sum();
        let optimal: u64 = d.rows.iter().map(|r| r.solver_optimal).sum();
        if solves as usize != times.len() {
            return Err(HarnessError::Export(format!(
                "{}: {} solves in results but {} timing rows",
                e.name,
                solves,
                times.len()
            )));
        }
        a.solver.push(solver_cell(&name, solves, optimal, &times));
        all_times.extend(times);
        all_solves += solves;
        all_optimal += optimal;
    }
    a.solver.push(solver_cell("all", all_solves, all_optimal, &all_times));
    Ok(a)
}

fn solver_cell(experiment: &str, solves: u64, optimal: u64, times: &[f64]) -> SolverCell {
    SolverCell {
        experiment: experiment.to_string(),
        solves,
        optimal,
        time_mean_s: if times.is_empty() { 0.0 } else { times.iter().sum::<f64>() / times.len() as f64 },
        time_p95_s: nearest_rank(times, 0.95).unwrap_or(0.0),
        time_max_s: times.iter().copied().fold(0.0, f64::max),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Self { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

fn delta_pct(x: f64, base: f64) -> String {
    format!("{:+.2}", (x / base - 1.0) * 100.0)
}

/// File name of one table; experiments beyond the first of a kind get a suffix.
fn table_name(base: &str, experiment: &str, first: bool) -> String {
    if first {
        base.to_string()
    } else {
        format!("{base}_{experiment}")
    }
}

pub fn render(a: &Analysis) -> Vec<Table> {
    let mut out = Vec::new();
    for (i, (exp, sums)) in a.overall.iter().enumerate() {
        let mut t = Table::new(
            table_name("table1_overall", exp, i == 0),
            &["method", "instances", "norm_makespan", "norm_p95", "xdev_edge", "cache_score", "model_cont"],
        );
        for s in sums {
            t.rows.push(vec![
                s.method.clone(),
                s.instances.to_string(),
                num(s.norm_makespan),
                num(s.norm_p95),
                num(s.rates.xdev_edge),
                num(s.rates.cache_score),
                num(s.rates.model_cont),
            ]);
        }
        out.push(t);
        let methods = &a.methods[exp];
        let fam = &a.families[exp];
        let mut header = vec!["family"];
        header.extend(methods.iter().map(String::as_str));
        let mut t = Table::new(table_name("table8_family", exp, i == 0), &header);
        for (family, per) in &fam.table {
            let mut row = vec![family.clone()];
            row.extend(methods.iter().map(|m| per.get(m).map(|x| num(*x)).unwrap_or_default()));
            t.rows.push(row);
        }
        out.push(t);
        let mut t = Table::new(table_name("ecdf", exp, i == 0), &["method", "norm_makespan", "fraction"]);
        for m in methods {
            let xs: Vec<f64> = a.normalized[exp].iter().filter(|r| &r.method == m).map(|r| r.norm_makespan).collect();
            for (x, f) in ecdf_points(&xs) {
                t.rows.push(vec![m.clone(), num(x), num(f)]);
            }
        }
        out.push(t);
    }
    let mut seen_prefix = false;
    let mut seen_conflict = false;
    for (exp, cells) in &a.ratios {
        let (base, first) = if a.kinds[exp] == ExperimentKind::Prefix {
            ("table2_prefix", !std::mem::replace(&mut seen_prefix, true))
        } else {
            ("table9_conflict", !std::mem::replace(&mut seen_conflict, true))
        };
        let mut ratios: Vec<f64> = cells.iter().map(|c| c.ratio).collect();
        ratios.sort_by(f64::total_cmp);
        ratios.dedup();
        let cols: Vec<String> = ratios.iter().map(|r| format!("r={r}")).collect();
        let mut header = vec!["method"];
        header.extend(cols.iter().map(String::as_str));
        let mut t = Table::new(table_name(base, exp, first), &header);
        for m in &a.methods[exp] {
            let mut row = vec![m.clone()];
            for r in &ratios {
                let c = cells.iter().find(|c| &c.method == m && c.ratio == *r);
                row.push(c.map(|c| num(c.norm_makespan)).unwrap_or_default());
            }
            t.rows.push(row);
        }
        out.push(t);
    }
    let mut seen_ablation = false;
    let mut seen_sens = false;
    for (exp, cells) in &a.variants {
        let Some(full) = cells.iter().find(|c| c.variant == "default") else { continue };
        let (base, first) = if a.kinds[exp] == ExperimentKind::Sensitivity {
            ("table11_sensitivity", !std::mem::replace(&mut seen_sens, true))
        } else {
            ("table3_ablation", !std::mem::replace(&mut seen_ablation, true))
        };
        let mut t = Table::new(
            table_name(base, exp, first),
            &["variant", "h_value", "instances", "norm_makespan", "norm_p95", "delta_makespan_pct"],
        );
        for c in cells {
            t.rows.push(vec![
                c.variant.clone(),
                c.h_value.to_string(),
                c.summary.instances.to_string(),
                num(c.summary.norm_makespan),
                num(c.summary.norm_p95),
                delta_pct(c.summary.norm_makespan, full.summary.norm_makespan),
            ]);
        }
        out.push(t);
    }
    for (i, (exp, cells)) in a.perturbations.iter().enumerate() {
        let methods = &a.methods[exp];
        let mut header = vec!["perturbation"];
        header.extend(methods.iter().map(String::as_str));
        let mut t = Table::new(table_name("table12_perturbation", exp, i == 0), &header);
        let mut perts: Vec<&String> = Vec::new();
        for c in cells {
            if !perts.contains(&&c.perturbation) {
                perts.push(&c.perturbation);
            }
        }
        for p in perts {
            let mut row = vec![p.clone()];
            for m in methods {
                let c = cells.iter().find(|c| &c.perturbation == p && &c.method == m);
                row.push(c.map(|c| num(c.norm_makespan)).unwrap_or_default());
            }
            t.rows.push(row);
        }
        out.push(t);
    }
    let mut t = Table::new(
        "table10_solver",
        &["experiment", "solves", "optimal", "optimal_pct", "time_mean_s", "time_p95_s", "time_max_s"],
    );
    for s in &a.solver {
        let pct = if s.solves == 0 { 100.0 } else { s.optimal as f64 / s.solves as f64 * 100.0 };
        t.rows.push(vec![
            s.experiment.clone(),
            s.solves.to_string(),
            s.optimal.to_string(),
            format!("{pct:.2}"),
            format!("{:.9}", s.time_mean_s),
            format!("{:.9}", s.time_p95_s),
            format!("{:.9}", s.time_max_s),
        ]);
    }
    out.push(t);
    out.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

/// Reads the declared CSVs and writes every table under `<output>/tables`.
pub fn export_tables(manifest: &Manifest) -> Result<Vec<PathBuf>> {
    manifest.validate()?;
    let data = load_declared(manifest)?;
    let analysis = analyze(manifest, &data)?;
    let dir = manifest.output_dir().join(TABLES_DIR);
    let mut written = Vec::new();
    for t in render(&analysis) {
        let p = dir.join(format!("{}.csv", t.name));
        write(&p, t.to_csv())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_suffix() {
        assert_eq!(ratio_of("prefix-chain-b16-r0.25"), Some(0.25));
        assert_eq!(ratio_of("conflict-c12-b32-r1"), Some(1.0));
        assert_eq!(ratio_of("montage-v0"), None);
    }

    #[test]
    fn delta_is_signed_percent() {
        assert_eq!(delta_pct(1.1, 1.0), "+10.00");
        assert_eq!(delta_pct(0.9, 1.0), "-10.00");
    }
}
