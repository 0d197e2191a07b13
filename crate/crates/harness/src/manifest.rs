//! Manifest document: workloads, methods and the experiment matrix.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wfsched_core::benchgen::{
    build_conflict_suite, build_main_suite, build_prefix_suite, synth_generate, MainSuiteSpec, QueryPlan, SuiteKind,
    SuiteSpec, CONFLICT_RATIOS, DEFAULT_GROUP_SIZE, FAMILIES,
};
use wfsched_core::benchgen::make_queries;
use wfsched_core::cost::{Ablation, ScoreWeights};
use wfsched_core::policy::POLICY_NAMES;
use wfsched_core::workflow::{Platform, WorkflowInstance};

use crate::config::Config;
use crate::error::{read_to_string, HarnessError, Result};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const BASELINE: &str = "round_robin";

/// Canonical policy name for `name`, accepting a few spellings of RoundRobin.
pub fn canonical_method(name: &str) -> Option<&'static str> {
    match name {
        "rr" | "roundrobin" | "round-robin" => Some("round_robin"),
        n => POLICY_NAMES.iter().find(|p| **p == n).copied(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub name: String,
    /// Relative paths resolve against the manifest's directory.
    pub output_dir: PathBuf,
    #[serde(default)]
    pub config: Option<PathBuf>,
    pub methods: Vec<String>,
    #[serde(default = "default_batches")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Normalized exports need the baseline in every experiment.
    #[serde(default = "yes")]
    pub normalize: bool,
    pub experiments: Vec<Experiment>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_batches() -> Vec<usize> {
    vec![16, 32]
}

fn default_seeds() -> Vec<u64> {
    vec![wfsched_core::benchgen::DEFAULT_SEED]
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Main,
    Prefix,
    Conflict,
    Ablation,
    Sensitivity,
    Perturbation,
    Other,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub kind: ExperimentKind,
    pub workloads: Vec<WorkloadEntry>,
    /// Overrides the manifest-level method list.
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    /// FATE variants, each a set of ablation flags.
    #[serde(default)]
    pub ablations: Vec<Vec<String>>,
    /// FATE variants at these horizons.
    #[serde(default)]
    pub horizons: Vec<u32>,
    /// FATE variants with one group scale changed.
    #[serde(default)]
    pub scales: Vec<ScaleSetting>,
    /// Applied to every method; empty means unperturbed only.
    #[serde(default)]
    pub perturbations: Vec<Perturbation>,
    /// Keep an evenly strided subset of this many instances.
    #[serde(default)]
    pub subset: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WorkloadEntry {
    Main {
        #[serde(default)]
        families: Option<Vec<String>>,
        #[serde(default = "four")]
        variants: usize,
        #[serde(default = "eight")]
        synthetic: usize,
    },
    Prefix {
        #[serde(default = "ratios")]
        ratios: Vec<f64>,
    },
    Conflict {
        #[serde(default = "twelve")]
        chain_length: usize,
    },
    Synthetic {
        depth: usize,
        width: usize,
        density: f64,
        #[serde(default)]
        label: Option<String>,
    },
    File {
        path: PathBuf,
    },
}

fn four() -> usize {
    4
}

fn eight() -> usize {
    8
}

fn twelve() -> usize {
    12
}

fn ratios() -> Vec<f64> {
    CONFLICT_RATIOS.to_vec()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleGroup {
    State,
    Locality,
    Prefix,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSetting {
    pub group: ScaleGroup,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Perturbation {
    pub switch_x: f64,
    pub transfer_x: f64,
    pub prefix_x: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self { switch_x: 1.0, transfer_x: 1.0, prefix_x: 1.0 }
    }
}

/// One configuration a method runs under.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub ablation: Ablation,
    pub horizon: Option<u32>,
    pub scale: Option<ScaleSetting>,
    pub perturbation: Perturbation,
}

impl Variant {
    pub fn new(ablation: Ablation, horizon: Option<u32>, scale: Option<ScaleSetting>, perturbation: Perturbation) -> Self {
        let mut parts = Vec::new();
        let flags = ablation.label();
        if !flags.is_empty() {
            parts.push(flags);
        }
        if let Some(h) = horizon {
            parts.push(format!("h={h}"));
        }
        if let Some(s) = scale {
            let g = match s.group {
                ScaleGroup::State => "state_scale",
                ScaleGroup::Locality => "locality_scale",
                ScaleGroup::Prefix => "prefix_scale",
            };
            parts.push(format!("{g}={}", s.value));
        }
        let pert = perturbation.apply(&ScoreWeights::default()).perturbation_label();
        if pert != "default" {
            parts.push(pert);
        }
        let label = if parts.is_empty() { "default".into() } else { parts.join("+") };
        Self { label, ablation, horizon, scale, perturbation }
    }

    pub fn weights(&self, base: &ScoreWeights) -> ScoreWeights {
        let mut w = self.perturbation.apply(base);
        w.ablation = self.ablation;
        if let Some(h) = self.horizon {
            w.horizon = h;
        }
        if let Some(s) = self.scale {
            match s.group {
                ScaleGroup::State => w.state_scale = s.value,
                ScaleGroup::Locality => w.locality_scale = s.value,
                ScaleGroup::Prefix => w.prefix_scale = s.value,
            }
        }
        w
    }

    pub fn is_plain(&self) -> bool {
        self.ablation == Ablation::default() && self.horizon.is_none() && self.scale.is_none()
    }
}

impl Perturbation {
    pub fn apply(&self, base: &ScoreWeights) -> ScoreWeights {
        ScoreWeights { switch_x: self.switch_x, transfer_x: self.transfer_x, prefix_x: self.prefix_x, ..base.clone() }
    }
}

impl Experiment {
    pub fn methods<'a>(&'a self, manifest: &'a Manifest) -> &'a [String] {
        self.methods.as_deref().unwrap_or(&manifest.methods)
    }

    /// Variants for `method`: FATE gets the full matrix, other methods only the perturbations.
    pub fn variants(&self, method: &str) -> Vec<Variant> {
        let perts = if self.perturbations.is_empty() { vec![Perturbation::default()] } else { self.perturbations.clone() };
        let mut out: Vec<Variant> = Vec::new();
        for p in perts {
            out.push(Variant::new(Ablation::default(), None, None, p));
            if method != "fate" {
                continue;
            }
            for flags in &self.ablations {
                let a = Ablation::from_flags(flags.iter().map(String::as_str)).expect("validated");
                out.push(Variant::new(a, None, None, p));
            }
            for h in &self.horizons {
                out.push(Variant::new(Ablation::default(), Some(*h), None, p));
            }
            for s in &self.scales {
                out.push(Variant::new(Ablation::default(), None, Some(*s), p));
            }
        }
        let mut seen = BTreeSet::new();
        out.retain(|v| seen.insert(v.label.clone()));
        out
    }

    pub fn csv_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn timing_name(&self) -> String {
        format!("{}.timing.csv", self.name)
    }
}

/// A workflow instance with the seed it was generated and is run under.
#[derive(Clone, Debug)]
pub struct SeededInstance {
    pub seed: u64,
    pub instance: WorkflowInstance,
}

impl SeededInstance {
    pub fn key(&self) -> (String, usize, u64) {
        (self.instance.dag.workflow_id().to_string(), self.instance.batch_size, self.seed)
    }
}

impl Manifest {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: Self = toml::from_str(text).map_err(|e| HarnessError::Manifest(e.to_string()))?;
        m.base_dir = base_dir.to_path_buf();
        for name in m.methods.iter_mut() {
            if let Some(c) = canonical_method(name) {
                *name = c.to_string();
            }
        }
        for e in m.experiments.iter_mut() {
            for name in e.methods.iter_mut().flatten() {
                if let Some(c) = canonical_method(name) {
                    *name = c.to_string();
                }
            }
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &dir)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn load_config(&self) -> Result<Config> {
        match &self.config {
            Some(p) => Config::load(&self.resolve(p)),
            None => Ok(Config::default()),
        }
    }

    /// Every CSV the manifest declares, relative to the output directory.
    pub fn declared_csvs(&self) -> Vec<String> {
        let mut out: Vec<String> = self.experiments.iter().flat_map(|e| [e.csv_name(), e.timing_name()]).collect();
        out.sort();
        out
    }

    /// Fails fast on anything that would break a run or an export.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Manifest(m));
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {MANIFEST_SCHEMA_VERSION})", self.schema_version));
        }
        if self.methods.is_empty() {
            return bad("methods is empty".into());
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return bad("batch_sizes must be nonempty and positive".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds is empty".into());
        }
        if self.experiments.is_empty() {
            return bad("no experiments".into());
        }
        let mut names = BTreeSet::new();
        for e in &self.experiments {
            let ok = !e.name.is_empty()
                && e.name.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-');
            if !ok {
                return bad(format!("experiment name {:?} must be lowercase [a-z0-9_-]", e.name));
            }
            if !names.insert(&e.name) {
                return bad(format!("duplicate experiment {}", e.name));
            }
            self.validate_experiment(e)?;
        }
        self.load_config()?;
        Ok(())
    }

    fn validate_experiment(&self, e: &Experiment) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Manifest(format!("experiment {}: {m}", e.name)));
        let methods = e.methods(self);
        if methods.is_empty() {
            return bad("methods is empty".into());
        }
        let mut seen = BTreeSet::new();
        for m in methods {
            if canonical_method(m) != Some(m.as_str()) {
                return bad(format!("unknown method {m}"));
            }
            if !seen.insert(m) {
                return bad(format!("method {m} listed twice"));
            }
        }
        if self.normalize && !methods.iter().any(|m| m == BASELINE) {
            return bad(format!("normalized output requested but {BASELINE} is not among the methods"));
        }
        let fate_variants = !e.ablations.is_empty() || !e.horizons.is_empty() || !e.scales.is_empty();
        if fate_variants && !methods.iter().any(|m| m == "fate") {
            return bad("ablation, horizon or scale variants need fate among the methods".into());
        }
        for flags in &e.ablations {
            if flags.is_empty() {
                return bad("empty ablation set (the default variant is always run)".into());
            }
            if let Err(m) = Ablation::from_flags(flags.iter().map(String::as_str)) {
                return bad(m);
            }
        }
        if let Some(h) = e.horizons.iter().find(|h| **h > 16) {
            return bad(format!("horizon {h} above 16"));
        }
        if let Some(s) = e.scales.iter().find(|s| !(s.value > 0.0 && s.value.is_finite())) {
            return bad(format!("scale {} must be positive", s.value));
        }
        for p in &e.perturbations {
            if [p.switch_x, p.transfer_x, p.prefix_x].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return bad("perturbation multipliers must be positive".into());
            }
        }
        if e.subset == Some(0) {
            return bad("subset must be positive".into());
        }
        if e.workloads.is_empty() {
            return bad("no workloads".into());
        }
        for w in &e.workloads {
            match w {
                WorkloadEntry::File { path } => {
                    let p = self.resolve(path);
                    if !p.is_file() {
                        return Err(HarnessError::MissingWorkload(p));
                    }
                }
                WorkloadEntry::Main { families, .. } => {
                    for f in families.iter().flatten() {
                        if !FAMILIES.contains(&f.as_str()) {
                            return bad(format!("unknown family {f}"));
                        }
                    }
                }
                WorkloadEntry::Prefix { ratios } => {
                    if ratios.is_empty() || ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
                        return bad("prefix ratios must be nonempty and within [0, 1]".into());
                    }
                }
                WorkloadEntry::Conflict { chain_length } if *chain_length == 0 => {
                    return bad("chain_length must be positive".into());
                }
                WorkloadEntry::Synthetic { depth, width, density, .. }
                    if (*depth == 0 || *width == 0 || !(0.0..=1.0).contains(density)) => {
                        return bad("synthetic depth and width must be positive, density within [0, 1]".into());
                    }
                _ => {}
            }
        }
        Ok(())
    }

    /// Instances of one experiment, sorted by (workflow, batch, seed).
    pub fn instances(&self, e: &Experiment, platform: &Platform, cfg: &Config) -> Result<Vec<SeededInstance>> {
        let gen = |err: wfsched_core::GenError| HarnessError::Manifest(format!("experiment {}: {err}", e.name));
        let mut out = Vec::new();
        for &seed in &self.seeds {
            for w in &e.workloads {
                match w {
                    WorkloadEntry::Main { families, variants, synthetic } => {
                        let mut spec = MainSuiteSpec {
                            batch_sizes: self.batch_sizes.clone(),
                            variants: *variants,
                            synthetic: *synthetic,
                            seed,
                            ..MainSuiteSpec::default()
                        };
                        if let Some(f) = families {
                            spec.families = f.clone();
                        }
                        for instance in build_main_suite(&spec, platform, &cfg.roles).map_err(gen)? {
                            out.push(SeededInstance { seed, instance });
                        }
                    }
                    WorkloadEntry::Prefix { ratios } => {
                        for &batch in &self.batch_sizes {
                            for &r in ratios {
                                let spec = SuiteSpec {
                                    repeat_ratio: r,
                                    batch_size: batch,
                                    seed,
                                    ..SuiteSpec::new(SuiteKind::PrefixReuse)
                                };
                                for instance in build_prefix_suite(&spec, platform, &cfg.roles).map_err(gen)? {
                                    out.push(SeededInstance { seed, instance });
                                }
                            }
                        }
                    }
                    WorkloadEntry::Conflict { chain_length } => {
                        for &batch in &self.batch_sizes {
                            let spec = SuiteSpec {
                                chain_length: *chain_length,
                                batch_size: batch,
                                seed,
                                ..SuiteSpec::new(SuiteKind::Conflict)
                            };
                            for instance in build_conflict_suite(&spec, platform, &cfg.roles).map_err(gen)? {
                                out.push(SeededInstance { seed, instance });
                            }
                        }
                    }
                    WorkloadEntry::Synthetic { depth, width, density, label } => {
                        for &batch in &self.batch_sizes {
                            let spec = SuiteSpec {
                                depth: *depth,
                                width: *width,
                                density: *density,
                                batch_size: batch,
                                seed,
                                label: label.clone(),
                                ..SuiteSpec::new(SuiteKind::Synthetic)
                            };
                            let dag = synth_generate(&spec, platform, &cfg.roles).map_err(gen)?;
                            let plan = QueryPlan { group_size: DEFAULT_GROUP_SIZE, ..QueryPlan::new(batch) };
                            let qs = make_queries(dag.workflow_id(), &plan, seed);
                            let instance = WorkflowInstance::new(dag, qs).map_err(|d| gen(d.into()))?;
                            out.push(SeededInstance { seed, instance });
                        }
                    }
                    WorkloadEntry::File { path } => {
                        let p = self.resolve(path);
                        if !p.is_file() {
                            return Err(HarnessError::MissingWorkload(p));
                        }
                        let instance = WorkflowInstance::from_json(&read_to_string(&p)?)
                            .map_err(|err| HarnessError::Parse { path: p.clone(), detail: err.to_string() })?;
                        out.push(SeededInstance { seed, instance });
                    }
                }
            }
        }
        out.sort_by_key(|s| s.key());
        for pair in out.windows(2) {
            if pair[0].key() == pair[1].key() {
                let (w, b, s) = pair[0].key();
                return Err(HarnessError::Manifest(format!("experiment {}: duplicate instance {w} batch {b} seed {s}", e.name)));
            }
        }
        if let Some(k) = e.subset {
            let stride = (out.len() / k).max(1);
            out = out.into_iter().step_by(stride).take(k).collect();
        }
        Ok(out)
    }
}
