//! Workflow DAG model: model profiles, devices, stage roles, stages, topology
//! annotations, readiness, and the versioned JSON document format.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::DagError;
use crate::ids::{DeviceId, ModelAlias, PrefixGroup, QueryId, StageId};

pub const DAG_SCHEMA: &str = "wfsched.workflow";
pub const DAG_SCHEMA_VERSION: u32 = 1;

/// Proxy profile of one served model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub alias: ModelAlias,
    /// Memory footprint proxy in GB.
    pub memory_gb: f64,
    /// Seconds per 1000 prompt tokens.
    pub prefill_coeff: f64,
    /// Seconds per output token.
    pub decode_coeff: f64,
    /// Seconds to load or activate the model on a device where it is not resident.
    pub switch_penalty: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelCatalog {
    models: BTreeMap<ModelAlias, ModelProfile>,
}

impl ModelCatalog {
    pub fn new(profiles: impl IntoIterator<Item = ModelProfile>) -> Result<Self, DagError> {
        let mut models = BTreeMap::new();
        for p in profiles {
            if !(p.prefill_coeff > 0.0 && p.decode_coeff > 0.0 && p.switch_penalty >= 0.0 && p.memory_gb > 0.0) {
                return Err(DagError::InvalidModel(p.alias.to_string()));
            }
            if models.insert(p.alias.clone(), p.clone()).is_some() {
                return Err(DagError::DuplicateModel(p.alias.to_string()));
            }
        }
        Ok(Self { models })
    }

    pub fn get(&self, alias: &ModelAlias) -> Option<&ModelProfile> {
        self.models.get(alias)
    }

    pub fn aliases(&self) -> impl Iterator<Item = &ModelAlias> {
        self.models.keys()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: DeviceId,
    /// Compute multiplier; 1.0 is nominal.
    pub speed_factor: f64,
    pub memory_gb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferEntry {
    pub from: DeviceId,
    pub to: DeviceId,
    pub beta: f64,
}

/// Devices plus the pairwise transfer coefficient (seconds per 1000 tokens).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceTopology {
    pub devices: Vec<DeviceSpec>,
    pub default_transfer: f64,
    #[serde(default)]
    pub transfer: Vec<TransferEntry>,
}

impl DeviceTopology {
    pub fn new(devices: Vec<DeviceSpec>, default_transfer: f64) -> Result<Self, DagError> {
        let topo = Self { devices, default_transfer, transfer: Vec::new() };
        topo.check()?;
        Ok(topo)
    }

    pub fn check(&self) -> Result<(), DagError> {
        let mut seen = BTreeSet::new();
        for d in &self.devices {
            if !(d.speed_factor > 0.0) {
                return Err(DagError::InvalidDevice(d.id.to_string()));
            }
            if !seen.insert(&d.id) {
                return Err(DagError::DuplicateDevice(d.id.to_string()));
            }
        }
        if self.devices.is_empty() {
            return Err(DagError::InvalidDevice("<empty topology>".into()));
        }
        if self.default_transfer < 0.0 || self.transfer.iter().any(|t| t.beta < 0.0) {
            return Err(DagError::InvalidDevice("negative transfer coefficient".into()));
        }
        Ok(())
    }

    pub fn device(&self, id: &DeviceId) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| &d.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &DeviceId> {
        self.devices.iter().map(|d| &d.id)
    }

    /// Transfer coefficient from `from` to `to`; zero on the diagonal.
    pub fn beta(&self, from: &DeviceId, to: &DeviceId) -> f64 {
        if from == to {
            return 0.0;
        }
        self.transfer
            .iter()
            .find(|t| &t.from == from && &t.to == to)
            .map(|t| t.beta)
            .unwrap_or(self.default_transfer)
    }

    /// Mean off-diagonal transfer coefficient.
    pub fn mean_beta(&self) -> f64 {
        let n = self.devices.len();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for a in &self.devices {
            for b in &self.devices {
                if a.id != b.id {
                    sum += self.beta(&a.id, &b.id);
                }
            }
        }
        sum / (n * (n - 1)) as f64
    }
}

/// Devices and models a run executes against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Platform {
    pub topology: DeviceTopology,
    pub models: ModelCatalog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    PromptPrep,
    Retrieval,
    Routing,
    Decomposition,
    Worker,
    Merge,
    Aggregation,
    Summarization,
    Validation,
    Verification,
    FinalSynthesis,
}

impl RoleKind {
    pub const ALL: [RoleKind; 11] = [
        RoleKind::PromptPrep,
        RoleKind::Retrieval,
        RoleKind::Routing,
        RoleKind::Decomposition,
        RoleKind::Worker,
        RoleKind::Merge,
        RoleKind::Aggregation,
        RoleKind::Summarization,
        RoleKind::Validation,
        RoleKind::Verification,
        RoleKind::FinalSynthesis,
    ];

    /// Merge and finalization roles never shard.
    pub fn is_merge_or_final(self) -> bool {
        matches!(self, RoleKind::Merge | RoleKind::Aggregation | RoleKind::FinalSynthesis)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoleKind::PromptPrep => "prompt_prep",
            RoleKind::Retrieval => "retrieval",
            RoleKind::Routing => "routing",
            RoleKind::Decomposition => "decomposition",
            RoleKind::Worker => "worker",
            RoleKind::Merge => "merge",
            RoleKind::Aggregation => "aggregation",
            RoleKind::Summarization => "summarization",
            RoleKind::Validation => "validation",
            RoleKind::Verification => "verification",
            RoleKind::FinalSynthesis => "final_synthesis",
        }
    }
}

/// Role template attached to a lifted stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRole {
    pub kind: RoleKind,
    pub complexity: f64,
    pub prefill_scale: f64,
    pub decode_scale: f64,
    pub max_token_proxy: u32,
    pub output_size_proxy: u32,
    pub comm_weight: f64,
    pub default_keep_cache: bool,
    pub default_cache_reuse: bool,
    pub shard_eligible: bool,
}

impl StageRole {
    fn multipliers_positive(&self) -> bool {
        self.complexity > 0.0 && self.prefill_scale > 0.0 && self.decode_scale > 0.0 && self.comm_weight > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub id: StageId,
    pub model: ModelAlias,
    pub eligible_devices: BTreeSet<DeviceId>,
    pub shard_bound: u32,
    pub role: StageRole,
    /// Stage template tokens prepended to every query prompt.
    pub prompt_token_proxy: u32,
    /// Output tokens per query.
    pub output_token_proxy: u32,
    #[serde(default)]
    pub shared_prefix_group: Option<PrefixGroup>,
    pub keep_cache: bool,
    pub cache_reuse: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_cost_override: Option<BTreeMap<DeviceId, f64>>,
}

/// Structural annotations computed by [`annotate_topology`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub level: u32,
    pub indegree: u32,
    pub outdegree: u32,
    pub reverse_depth: u32,
    pub level_width: u32,
}

#[derive(Clone, Debug, Default)]
struct Adjacency {
    parents: BTreeMap<StageId, Vec<StageId>>,
    children: BTreeMap<StageId, Vec<StageId>>,
    /// Descendants with their level offset, sorted by (offset, id).
    descendants: BTreeMap<StageId, Vec<(u32, StageId)>>,
}

/// A workflow DAG of LLM stages.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "DagDocument", into = "DagDocument")]
pub struct WorkflowDag {
    workflow_id: String,
    family: String,
    stages: BTreeMap<StageId, Stage>,
    edges: BTreeSet<(StageId, StageId)>,
    annotations: BTreeMap<StageId, Annotation>,
    adj: Adjacency,
}

impl PartialEq for WorkflowDag {
    fn eq(&self, other: &Self) -> bool {
        self.workflow_id == other.workflow_id
            && self.family == other.family
            && self.stages == other.stages
            && self.edges == other.edges
            && self.annotations == other.annotations
    }
}

impl WorkflowDag {
    /// Builds a dag without validating it; see [`validate_dag`].
    pub fn new(
        workflow_id: impl Into<String>,
        family: impl Into<String>,
        stages: impl IntoIterator<Item = Stage>,
        edges: impl IntoIterator<Item = (StageId, StageId)>,
    ) -> Self {
        let mut dag = Self {
            workflow_id: workflow_id.into(),
            family: family.into(),
            stages: stages.into_iter().map(|s| (s.id.clone(), s)).collect(),
            edges: edges.into_iter().collect(),
            annotations: BTreeMap::new(),
            adj: Adjacency::default(),
        };
        dag.rebuild();
        dag
    }

    fn rebuild(&mut self) {
        let mut adj = Adjacency::default();
        for id in self.stages.keys() {
            adj.parents.insert(id.clone(), Vec::new());
            adj.children.insert(id.clone(), Vec::new());
        }
        for (u, v) in &self.edges {
            adj.children.entry(u.clone()).or_default().push(v.clone());
            adj.parents.entry(v.clone()).or_default().push(u.clone());
        }
        if !self.annotations.is_empty() && self.annotations.len() == self.stages.len() {
            for id in self.stages.keys() {
                let base = self.annotations[id].level;
                let mut seen = BTreeSet::new();
                let mut queue: VecDeque<&StageId> = adj.children[id].iter().collect();
                while let Some(w) = queue.pop_front() {
                    if seen.insert(w.clone()) {
                        queue.extend(adj.children[w].iter());
                    }
                }
                let mut list: Vec<(u32, StageId)> = seen
                    .into_iter()
                    .map(|w| (self.annotations[&w].level.saturating_sub(base), w))
                    .collect();
                list.sort();
                adj.descendants.insert(id.clone(), list);
            }
        }
        self.adj = adj;
    }

    pub fn workflow_id(&self) -> &str {
        &self.workflow_id
    }

    pub fn family(&self) -> &str {
        &self.family
    }

    pub fn set_family(&mut self, family: impl Into<String>) {
        self.family = family.into();
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn stages(&self) -> impl Iterator<Item = &Stage> {
        self.stages.values()
    }

    pub fn stage_ids(&self) -> impl Iterator<Item = &StageId> {
        self.stages.keys()
    }

    pub fn stage(&self, id: &StageId) -> Option<&Stage> {
        self.stages.get(id)
    }

    /// Mutable access to stage attributes. Structure (ids, edges) is not editable here.
    pub fn stages_mut(&mut self) -> impl Iterator<Item = &mut Stage> {
        self.stages.values_mut()
    }

    pub fn stage_mut(&mut self, id: &StageId) -> Option<&mut Stage> {
        self.stages.get_mut(id)
    }

    pub fn edges(&self) -> &BTreeSet<(StageId, StageId)> {
        &self.edges
    }

    pub fn parents(&self, id: &StageId) -> &[StageId] {
        self.adj.parents.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn children(&self, id: &StageId) -> &[StageId] {
        self.adj.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn annotation(&self, id: &StageId) -> Option<&Annotation> {
        self.annotations.get(id)
    }

    pub fn annotations(&self) -> &BTreeMap<StageId, Annotation> {
        &self.annotations
    }

    pub fn is_annotated(&self) -> bool {
        !self.stages.is_empty() && self.annotations.len() == self.stages.len()
    }

    /// Descendants of `id` paired with their level offset (`level(w) - level(id)`).
    /// Empty until the dag is annotated.
    pub fn descendants(&self, id: &StageId) -> &[(u32, StageId)] {
        self.adj.descendants.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn sources(&self) -> Vec<StageId> {
        self.stages.keys().filter(|id| self.parents(id).is_empty()).cloned().collect()
    }

    pub fn sinks(&self) -> Vec<StageId> {
        self.stages.keys().filter(|id| self.children(id).is_empty()).cloned().collect()
    }

    pub fn max_level(&self) -> u32 {
        self.annotations.values().map(|a| a.level).max().unwrap_or(0)
    }

    /// Topological order (Kahn, ties by id), or `None` when cyclic.
    pub fn topo_order(&self) -> Option<Vec<StageId>> {
        let mut indeg: BTreeMap<&StageId, usize> = self.stages.keys().map(|k| (k, 0)).collect();
        for (u, v) in &self.edges {
            if self.stages.contains_key(u) {
                if let Some(d) = indeg.get_mut(v) {
                    *d += 1;
                }
            }
        }
        let mut ready: BTreeSet<&StageId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(k, _)| *k).collect();
        let mut order = Vec::with_capacity(self.stages.len());
        while let Some(u) = ready.pop_first() {
            order.push(u.clone());
            for w in self.children(u) {
                if let Some(d) = indeg.get_mut(w) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(w);
                    }
                }
            }
        }
        (order.len() == self.stages.len()).then_some(order)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dag serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, DagError> {
        serde_json::from_str(text).map_err(|e| DagError::Document(e.to_string()))
    }
}

/// Versioned on-disk form of a [`WorkflowDag`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DagDocument {
    pub schema: String,
    pub version: u32,
    pub workflow_id: String,
    pub family: String,
    pub stages: Vec<Stage>,
    pub edges: Vec<(StageId, StageId)>,
    #[serde(default)]
    pub annotations: BTreeMap<StageId, Annotation>,
}

impl From<WorkflowDag> for DagDocument {
    fn from(dag: WorkflowDag) -> Self {
        Self {
            schema: DAG_SCHEMA.to_string(),
            version: DAG_SCHEMA_VERSION,
            workflow_id: dag.workflow_id,
            family: dag.family,
            stages: dag.stages.into_values().collect(),
            edges: dag.edges.into_iter().collect(),
            annotations: dag.annotations,
        }
    }
}

impl TryFrom<DagDocument> for WorkflowDag {
    type Error = DagError;

    fn try_from(doc: DagDocument) -> Result<Self, DagError> {
        if doc.schema != DAG_SCHEMA || doc.version != DAG_SCHEMA_VERSION {
            return Err(DagError::Document(format!(
                "unsupported schema {} v{} (expected {} v{})",
                doc.schema, doc.version, DAG_SCHEMA, DAG_SCHEMA_VERSION
            )));
        }
        let mut dag = WorkflowDag::new(doc.workflow_id, doc.family, doc.stages, doc.edges);
        dag.annotations = doc.annotations;
        dag.rebuild();
        Ok(dag)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Cycle,
    DanglingEdge,
    EmptyEligibility,
    UnknownDevice,
    UnknownModel,
    ShardBound,
    ShardIneligible,
    NonPositiveMultiplier,
    AnnotationMismatch,
}

impl ViolationKind {
    pub fn label(self) -> &'static str {
        match self {
            ViolationKind::Cycle => "cycle",
            ViolationKind::DanglingEdge => "dangling edge",
            ViolationKind::EmptyEligibility => "empty eligibility",
            ViolationKind::UnknownDevice => "unknown device",
            ViolationKind::UnknownModel => "unknown model",
            ViolationKind::ShardBound => "shard bound",
            ViolationKind::ShardIneligible => "shard ineligible role",
            ViolationKind::NonPositiveMultiplier => "non-positive multiplier",
            ViolationKind::AnnotationMismatch => "annotation mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: String,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

/// Structural and per-stage checks. Violations are returned as data.
pub fn validate_dag(dag: &WorkflowDag) -> ValidationReport {
    let mut out = Vec::new();
    let mut push = |kind: ViolationKind, subject: String, detail: String| out.push(Violation { kind, subject, detail });

    for (u, v) in &dag.edges {
        if !dag.stages.contains_key(u) || !dag.stages.contains_key(v) {
            push(ViolationKind::DanglingEdge, format!("{u}->{v}"), "edge endpoint is not a stage".into());
        }
    }
    if dag.topo_order().is_none() {
        let cyclic: Vec<String> = cyclic_stages(dag).into_iter().map(|s| s.to_string()).collect();
        push(ViolationKind::Cycle, cyclic.join(","), "graph contains a cycle".into());
    }
    for s in dag.stages.values() {
        if s.eligible_devices.is_empty() {
            push(ViolationKind::EmptyEligibility, s.id.to_string(), "no eligible devices".into());
        }
        if s.shard_bound < 1 {
            push(ViolationKind::ShardBound, s.id.to_string(), "shard bound must be >= 1".into());
        }
        if s.shard_bound > 1 && (!s.role.shard_eligible || s.role.kind.is_merge_or_final()) {
            push(
                ViolationKind::ShardIneligible,
                s.id.to_string(),
                format!("role {} cannot shard (bound {})", s.role.kind.as_str(), s.shard_bound),
            );
        }
        if !s.role.multipliers_positive() {
            push(ViolationKind::NonPositiveMultiplier, s.id.to_string(), "role multipliers must be > 0".into());
        }
    }
    if !dag.annotations.is_empty() && dag.topo_order().is_some() {
        match compute_annotations(dag) {
            Some(fresh) if fresh == dag.annotations => {}
            _ => push(ViolationKind::AnnotationMismatch, dag.workflow_id.clone(), "annotations are stale".into()),
        }
    }
    ValidationReport { violations: out }
}

/// [`validate_dag`] plus device and model membership against a platform.
pub fn validate_against(dag: &WorkflowDag, platform: &Platform) -> ValidationReport {
    let mut report = validate_dag(dag);
    let ids: BTreeSet<&DeviceId> = platform.topology.ids().collect();
    for s in dag.stages.values() {
        for d in &s.eligible_devices {
            if !ids.contains(d) {
                report.violations.push(Violation {
                    kind: ViolationKind::UnknownDevice,
                    subject: s.id.to_string(),
                    detail: format!("device {d} not in topology"),
                });
            }
        }
        if platform.models.get(&s.model).is_none() {
            report.violations.push(Violation {
                kind: ViolationKind::UnknownModel,
                subject: s.id.to_string(),
                detail: format!("model {} not in catalog", s.model),
            });
        }
    }
    report
}

fn cyclic_stages(dag: &WorkflowDag) -> Vec<StageId> {
    // Whatever Kahn cannot remove lies on or behind a cycle.
    let mut indeg: BTreeMap<&StageId, usize> = dag.stages.keys().map(|k| (k, 0)).collect();
    for (u, v) in &dag.edges {
        if dag.stages.contains_key(u) {
            if let Some(d) = indeg.get_mut(v) {
                *d += 1;
            }
        }
    }
    let mut queue: Vec<&StageId> = indeg.iter().filter(|(_, &d)| d == 0).map(|(k, _)| *k).collect();
    let mut removed = BTreeSet::new();
    while let Some(u) = queue.pop() {
        removed.insert(u.clone());
        for w in dag.children(u) {
            if let Some(d) = indeg.get_mut(w) {
                *d -= 1;
                if *d == 0 {
                    queue.push(w);
                }
            }
        }
    }
    dag.stages.keys().filter(|k| !removed.contains(*k)).cloned().collect()
}

fn compute_annotations(dag: &WorkflowDag) -> Option<BTreeMap<StageId, Annotation>> {
    let order = dag.topo_order()?;
    let mut level: BTreeMap<&StageId, u32> = BTreeMap::new();
    for v in &order {
        let l = dag.parents(v).iter().map(|u| level[u] + 1).max().unwrap_or(0);
        level.insert(v, l);
    }
    let mut rdepth: BTreeMap<&StageId, u32> = BTreeMap::new();
    for v in order.iter().rev() {
        let r = dag.children(v).iter().map(|w| rdepth[w] + 1).max().unwrap_or(0);
        rdepth.insert(v, r);
    }
    let mut width: BTreeMap<u32, u32> = BTreeMap::new();
    for l in level.values() {
        *width.entry(*l).or_default() += 1;
    }
    Some(
        order
            .iter()
            .map(|v| {
                (
                    v.clone(),
                    Annotation {
                        level: level[v],
                        indegree: dag.parents(v).len() as u32,
                        outdegree: dag.children(v).len() as u32,
                        reverse_depth: rdepth[v],
                        level_width: width[&level[v]],
                    },
                )
            })
            .collect(),
    )
}

/// Fills level, degree, reverse-depth and level-width annotations.
pub fn annotate_topology(dag: &WorkflowDag) -> Result<WorkflowDag, DagError> {
    let annotations = compute_annotations(dag).ok_or_else(|| DagError::Cyclic(dag.workflow_id.clone()))?;
    let mut out = dag.clone();
    out.annotations = annotations;
    out.rebuild();
    Ok(out)
}

/// Stages not completed, running or committed whose parents have all completed.
pub fn ready_set(
    dag: &WorkflowDag,
    completed: &BTreeSet<StageId>,
    running: &BTreeSet<StageId>,
    committed: &BTreeSet<StageId>,
) -> BTreeSet<StageId> {
    dag.stages
        .keys()
        .filter(|v| !completed.contains(*v) && !running.contains(*v) && !committed.contains(*v))
        .filter(|v| dag.parents(v).iter().all(|u| completed.contains(u)))
        .cloned()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: QueryId,
    pub prompt_tokens: u32,
    #[serde(default)]
    pub prefix_group: Option<PrefixGroup>,
    /// Length of the shared prefix when `prefix_group` is set.
    #[serde(default)]
    pub prefix_tokens: u32,
}

/// A dag evaluated on a batch of independent queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkflowInstance {
    pub dag: WorkflowDag,
    pub queries: Vec<Query>,
    pub batch_size: usize,
}

impl WorkflowInstance {
    pub fn new(dag: WorkflowDag, queries: Vec<Query>) -> Result<Self, DagError> {
        let ids: BTreeSet<&QueryId> = queries.iter().map(|q| &q.id).collect();
        if ids.len() != queries.len() {
            return Err(DagError::DuplicateQuery(dag.workflow_id().to_string()));
        }
        if queries.is_empty() {
            return Err(DagError::EmptyBatch(dag.workflow_id().to_string()));
        }
        let batch_size = queries.len();
        Ok(Self { dag, queries, batch_size })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, DagError> {
        let inst: Self = serde_json::from_str(text).map_err(|e| DagError::Document(e.to_string()))?;
        if inst.batch_size != inst.queries.len() {
            return Err(DagError::Document("batch_size does not match query count".into()));
        }
        Ok(inst)
    }
}

/// One or more instances executed together. Frontiers are unions over instances.
#[derive(Clone, Debug)]
pub struct Workload {
    dag: WorkflowDag,
    workflow_ids: Vec<String>,
    families: Vec<String>,
    queries: Vec<Vec<Query>>,
    query_pos: Vec<BTreeMap<QueryId, usize>>,
    stage_instance: BTreeMap<StageId, usize>,
}

impl Workload {
    pub fn single(instance: &WorkflowInstance) -> Self {
        let stage_instance = instance.dag.stage_ids().map(|s| (s.clone(), 0)).collect();
        Self {
            dag: instance.dag.clone(),
            workflow_ids: vec![instance.dag.workflow_id().to_string()],
            families: vec![instance.dag.family().to_string()],
            query_pos: vec![instance.queries.iter().enumerate().map(|(i, q)| (q.id.clone(), i)).collect()],
            queries: vec![instance.queries.clone()],
            stage_instance,
        }
    }

    /// Disjoint union; stage and query ids are namespaced as `<workflow>/<id>`.
    pub fn union(instances: &[WorkflowInstance]) -> Result<Self, DagError> {
        if instances.len() == 1 {
            return Ok(Self::single(&instances[0]));
        }
        let mut stages = Vec::new();
        let mut edges = Vec::new();
        let mut stage_instance = BTreeMap::new();
        let mut queries = Vec::new();
        let mut workflow_ids = Vec::new();
        let mut families = Vec::new();
        let mut annotations = BTreeMap::new();
        for (i, inst) in instances.iter().enumerate() {
            let wf = inst.dag.workflow_id();
            if workflow_ids.iter().any(|w| w == wf) {
                return Err(DagError::Document(format!("duplicate workflow id {wf} in union")));
            }
            let ns = |s: &StageId| StageId::new(format!("{wf}/{s}"));
            for s in inst.dag.stages() {
                let mut s = s.clone();
                s.id = ns(&s.id);
                stage_instance.insert(s.id.clone(), i);
                stages.push(s);
            }
            for (u, v) in inst.dag.edges() {
                edges.push((ns(u), ns(v)));
            }
            for (k, a) in inst.dag.annotations() {
                annotations.insert(ns(k), *a);
            }
            queries.push(
                inst.queries
                    .iter()
                    .map(|q| Query { id: QueryId::new(format!("{wf}/{}", q.id)), ..q.clone() })
                    .collect::<Vec<_>>(),
            );
            workflow_ids.push(wf.to_string());
            families.push(inst.dag.family().to_string());
        }
        let mut dag = WorkflowDag::new(workflow_ids.join("+"), families.join("+"), stages, edges);
        dag = annotate_topology(&dag)?;
        let query_pos = queries
            .iter()
            .map(|qs: &Vec<Query>| qs.iter().enumerate().map(|(i, q)| (q.id.clone(), i)).collect())
            .collect();
        Ok(Self { dag, workflow_ids, families, queries, query_pos, stage_instance })
    }

    pub fn dag(&self) -> &WorkflowDag {
        &self.dag
    }

    pub fn workflow_id(&self) -> String {
        self.workflow_ids.join("+")
    }

    pub fn family(&self) -> String {
        self.families.join("+")
    }

    pub fn batch_size(&self) -> usize {
        self.queries.iter().map(Vec::len).sum()
    }

    pub fn stage(&self, id: &StageId) -> Option<&Stage> {
        self.dag.stage(id)
    }

    /// The full query batch a stage processes.
    pub fn stage_queries(&self, id: &StageId) -> &[Query] {
        match self.stage_instance.get(id) {
            Some(&i) => &self.queries[i],
            None => &[],
        }
    }

    pub fn query(&self, stage: &StageId, q: &QueryId) -> Option<&Query> {
        let i = *self.stage_instance.get(stage)?;
        self.query_pos[i].get(q).map(|&p| &self.queries[i][p])
    }

    pub fn all_queries(&self) -> impl Iterator<Item = &Query> {
        self.queries.iter().flatten()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn role(kind: RoleKind, shard: bool) -> StageRole {
        StageRole {
            kind,
            complexity: 1.0,
            prefill_scale: 1.0,
            decode_scale: 1.0,
            max_token_proxy: 0,
            output_size_proxy: 0,
            comm_weight: 1.0,
            default_keep_cache: false,
            default_cache_reuse: false,
            shard_eligible: shard,
        }
    }

    pub fn stage(id: &str) -> Stage {
        Stage {
            id: id.into(),
            model: "m".into(),
            eligible_devices: ["d0".into(), "d1".into()].into_iter().collect(),
            shard_bound: 1,
            role: role(RoleKind::Worker, true),
            prompt_token_proxy: 0,
            output_token_proxy: 0,
            shared_prefix_group: None,
            keep_cache: false,
            cache_reuse: false,
            base_cost_override: None,
        }
    }

    pub fn dag(ids: &[&str], edges: &[(&str, &str)]) -> WorkflowDag {
        WorkflowDag::new(
            "wf",
            "test",
            ids.iter().map(|i| stage(i)),
            edges.iter().map(|(u, v)| (StageId::from(*u), StageId::from(*v))),
        )
    }

    fn set(ids: &[&str]) -> BTreeSet<StageId> {
        ids.iter().map(|s| StageId::from(*s)).collect()
    }

    #[test]
    fn chain_is_valid() {
        let d = dag(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        assert!(validate_dag(&d).is_ok());
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let d = dag(&["A"], &[("A", "A")]);
        let r = validate_dag(&d);
        assert!(r.has(ViolationKind::Cycle));
        assert_eq!(r.violations[0].kind.label(), "cycle");
    }

    #[test]
    fn empty_eligibility_is_reported() {
        let mut d = dag(&["A", "B"], &[("A", "B")]);
        d.stage_mut(&"B".into()).unwrap().eligible_devices.clear();
        let r = validate_dag(&d);
        assert!(r.has(ViolationKind::EmptyEligibility));
        assert_eq!(r.violations[0].subject, "B");
    }

    #[test]
    fn dangling_edge_and_shard_rules() {
        let mut d = dag(&["A"], &[("A", "Z")]);
        d.stage_mut(&"A".into()).unwrap().shard_bound = 2;
        d.stage_mut(&"A".into()).unwrap().role = role(RoleKind::Merge, false);
        let r = validate_dag(&d);
        assert!(r.has(ViolationKind::DanglingEdge));
        assert!(r.has(ViolationKind::ShardIneligible));
    }

    #[test]
    fn chain_annotations() {
        let d = annotate_topology(&dag(&["A", "B", "C"], &[("A", "B"), ("B", "C")])).unwrap();
        let lv: Vec<u32> = ["A", "B", "C"].iter().map(|s| d.annotation(&(*s).into()).unwrap().level).collect();
        let rd: Vec<u32> = ["A", "B", "C"].iter().map(|s| d.annotation(&(*s).into()).unwrap().reverse_depth).collect();
        assert_eq!(lv, vec![0, 1, 2]);
        assert_eq!(rd, vec![2, 1, 0]);
    }

    #[test]
    fn diamond_level_width() {
        let d = annotate_topology(&dag(&["A", "B", "C", "D"], &[("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])).unwrap();
        let b = d.annotation(&"B".into()).unwrap();
        assert_eq!(b.level, 1);
        assert_eq!(b.level_width, 2);
        assert_eq!(d.annotation(&"D".into()).unwrap().indegree, 2);
        assert_eq!(d.descendants(&"A".into()), &[(1, "B".into()), (1, "C".into()), (2, "D".into())]);
    }

    #[test]
    fn annotate_rejects_cycles() {
        assert!(annotate_topology(&dag(&["A", "B"], &[("A", "B"), ("B", "A")])).is_err());
    }

    #[test]
    fn ready_sets() {
        let d = dag(&["A", "B", "C", "D"], &[("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")]);
        let none = BTreeSet::new();
        assert_eq!(ready_set(&d, &set(&["A"]), &none, &none), set(&["B", "C"]));
        assert_eq!(ready_set(&d, &set(&["A"]), &none, &set(&["B"])), set(&["C"]));
        assert_eq!(ready_set(&d, &none, &none, &none), set(&["A"]));
        assert_eq!(ready_set(&d, &set(&["A"]), &set(&["C"]), &none), set(&["B"]));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut d = annotate_topology(&dag(&["A", "B"], &[("A", "B")])).unwrap();
        let s = d.stage_mut(&"A".into()).unwrap();
        s.base_cost_override = Some([("d0".into(), 0.1 + 0.2)].into_iter().collect());
        s.shared_prefix_group = Some("g".into());
        let text = d.to_json();
        let back = WorkflowDag::from_json(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn rejects_unknown_schema() {
        let text = dag(&["A"], &[]).to_json().replace(DAG_SCHEMA, "other");
        assert!(WorkflowDag::from_json(&text).is_err());
    }

    #[test]
    fn union_namespaces_stages() {
        let a = WorkflowInstance::new(
            annotate_topology(&dag(&["A", "B"], &[("A", "B")])).unwrap(),
            vec![Query { id: "q0".into(), prompt_tokens: 10, prefix_group: None, prefix_tokens: 0 }],
        )
        .unwrap();
        let mut b = a.clone();
        b.dag = WorkflowDag::new("wf2", "test", a.dag.stages().cloned(), a.dag.edges().iter().cloned());
        let w = Workload::union(&[a, b]).unwrap();
        assert_eq!(w.dag().len(), 4);
        assert_eq!(w.stage_queries(&"wf2/A".into())[0].id.as_str(), "wf2/q0");
        assert_eq!(w.batch_size(), 2);
    }
}
