use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use wfsched_core::benchgen::{
    build_conflict_suite, build_main_suite, build_prefix_suite, make_queries, synth_generate, MainSuiteSpec, QueryPlan,
    SuiteKind, SuiteSpec, CONFLICT_RATIOS, DEFAULT_SEED,
};
use wfsched_core::cost::{Ablation, ScoreWeights};
use wfsched_core::workflow::WorkflowInstance;
use wfsched_harness::config::Config;
use wfsched_harness::manifest::{canonical_method, Perturbation, Variant};
use wfsched_harness::runner::execute;
use wfsched_harness::schema::{rows_to_csv, run_id, CsvRow};
use wfsched_harness::{export_tables, run_manifest, verify, Manifest};

#[derive(Parser)]
#[command(name = "wfsched", version, about = "Workflow DAG scheduling simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Main,
    Prefix,
    Conflict,
    Synthetic,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate workflow instances as JSON files.
    Gen {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "batch", default_values_t = [16usize, 32])]
        batches: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Repeat ratio (prefix) ; all ratios when omitted.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 3)]
        width: usize,
        #[arg(long, default_value_t = 0.5)]
        density: f64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run one instance under one method and print its CSV row.
    Run {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Planning horizon H.
        #[arg(long = "h")]
        horizon: Option<u32>,
        #[arg(long = "ablate")]
        ablate: Vec<String>,
        #[arg(long)]
        switch_x: Option<f64>,
        #[arg(long)]
        transfer_x: Option<f64>,
        #[arg(long)]
        prefix_x: Option<f64>,
        /// Override one weight, e.g. `--weight gamma=0.7`.
        #[arg(long = "weight", value_name = "KEY=VALUE")]
        weights: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Write the state event log as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute every cell of a manifest.
    Manifest {
        path: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Export tables from a manifest's declared CSVs.
    Export { path: PathBuf },
    /// Check the solver against enumeration and the metric formulas.
    Verify {
        #[arg(long, default_value_t = 200)]
        problems: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn gen(
    suite: Suite,
    out: &Path,
    batches: &[usize],
    seed: u64,
    ratio: Option<f64>,
    shape: (usize, usize, f64),
    cfg: &Config,
) -> Result<()> {
    let platform = cfg.platform().map_err(anyhow::Error::msg)?;
    let roles = &cfg.roles;
    let mut insts: Vec<WorkflowInstance> = Vec::new();
    match suite {
        Suite::Main => {
            let spec = MainSuiteSpec { batch_sizes: batches.to_vec(), seed, ..MainSuiteSpec::default() };
            insts = build_main_suite(&spec, &platform, roles)?;
        }
        Suite::Prefix => {
            let ratios = ratio.map(|r| vec![r]).unwrap_or_else(|| CONFLICT_RATIOS.to_vec());
            for &b in batches {
                for &r in &ratios {
                    let spec =
                        SuiteSpec { repeat_ratio: r, batch_size: b, seed, ..SuiteSpec::new(SuiteKind::PrefixReuse) };
                    insts.extend(build_prefix_suite(&spec, &platform, roles)?);
                }
            }
        }
        Suite::Conflict => {
            for &b in batches {
                let spec = SuiteSpec { batch_size: b, seed, ..SuiteSpec::new(SuiteKind::Conflict) };
                insts.extend(build_conflict_suite(&spec, &platform, roles)?);
            }
        }
        Suite::Synthetic => {
            let (depth, width, density) = shape;
            for &b in batches {
                let spec = SuiteSpec { depth, width, density, batch_size: b, seed, ..SuiteSpec::new(SuiteKind::Synthetic) };
                let dag = synth_generate(&spec, &platform, roles)?;
                let qs = make_queries(dag.workflow_id(), &QueryPlan::new(b), seed);
                insts.push(WorkflowInstance::new(dag, qs)?);
            }
        }
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for inst in &insts {
        let p = out.join(format!("{}.b{}.json", inst.dag.workflow_id(), inst.batch_size));
        std::fs::write(&p, inst.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    eprintln!("wrote {} instances to {}", insts.len(), out.display());
    Ok(())
}

fn set_weight(w: &ScoreWeights, kv: &str) -> Result<ScoreWeights> {
    let Some((k, v)) = kv.split_once('=') else { bail!("--weight expects KEY=VALUE, got {kv}") };
    let mut doc = serde_json::to_value(w)?;
    let slot = doc.get_mut(k).with_context(|| format!("unknown weight {k}"))?;
    *slot = serde_json::from_str(v).with_context(|| format!("bad value for {k}: {v}"))?;
    serde_json::from_value(doc).with_context(|| format!("bad value for {k}: {v}"))
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    instance: &Path,
    policy: &str,
    cfg: &Config,
    horizon: Option<u32>,
    ablate: &[String],
    pert: Perturbation,
    overrides: &[String],
    seed: u64,
    trace: Option<&Path>,
) -> Result<String> {
    let method = canonical_method(policy).with_context(|| format!("unknown policy {policy}"))?;
    let text = std::fs::read_to_string(instance).with_context(|| format!("reading {}", instance.display()))?;
    let inst = WorkflowInstance::from_json(&text)?;
    let ablation = Ablation::from_flags(ablate.iter().map(String::as_str)).map_err(anyhow::Error::msg)?;
    let variant = Variant::new(ablation, horizon, None, pert);
    let mut weights = variant.weights(&cfg.weights);
    for kv in overrides {
        weights = set_weight(&weights, kv)?;
    }
    weights.validate().map_err(anyhow::Error::msg)?;
    let platform = cfg.platform().map_err(anyhow::Error::msg)?;
    let record = execute(&inst, method, &platform, &weights, cfg.beam, seed, trace.is_some()).map_err(anyhow::Error::msg)?;
    if let (Some(p), Some(t)) = (trace, &record.trace) {
        std::fs::write(p, t).with_context(|| format!("writing {}", p.display()))?;
    }
    if record.solver.solves > 0 {
        eprintln!(
            "solver: {} solves, {} optimal, mean {:.6}s, p95 {:.6}s, max {:.6}s",
            record.solver.solves,
            record.solver.optimal,
            record.solver.mean(),
            record.solver.percentile(0.95),
            record.solver.max()
        );
    }
    let id = run_id("run", method, &variant.label, inst.dag.workflow_id(), inst.batch_size, seed);
    Ok(rows_to_csv(&[CsvRow::from_record(id, &record)]))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Gen { suite, out, batches, seed, ratio, depth, width, density, config } => {
            let cfg = load_config(config.as_deref())?;
            gen(suite, &out, &batches, seed, ratio, (depth, width, density), &cfg)?;
        }
        Cmd::Run {
            instance,
            policy,
            config,
            horizon,
            ablate,
            switch_x,
            transfer_x,
            prefix_x,
            weights,
            seed,
            trace,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let pert = Perturbation {
                switch_x: switch_x.unwrap_or(cfg.weights.switch_x),
                transfer_x: transfer_x.unwrap_or(cfg.weights.transfer_x),
                prefix_x: prefix_x.unwrap_or(cfg.weights.prefix_x),
            };
            let csv = run_one(&instance, &policy, &cfg, horizon, &ablate, pert, &weights, seed, trace.as_deref())?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Cmd::Manifest { path, jobs } => {
            let m = Manifest::load(&path)?;
            let report = run_manifest(&m, jobs)?;
            for (exp, n) in &report.rows {
                eprintln!("{exp}: {n} rows");
            }
            eprintln!(
                "{} runs passed conservation checks in {:.1}s; outputs in {}",
                report.conservation_checked,
                report.elapsed_s,
                m.output_dir().display()
            );
        }
        Cmd::Export { path } => {
            let m = Manifest::load(&path)?;
            for p in export_tables(&m)? {
                println!("{}", p.display());
            }
        }
        Cmd::Verify { problems } => {
            let mut checks = vec![verify::solver_oracle(problems, 10.0)];
            checks.extend(verify::metric_examples());
            for c in &checks {
                println!("{}", c.line());
            }
            if checks.iter().any(|c| !c.passed) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
