use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assign::{assign_models, finalize, ModelTrack};
use super::{stable_hash, DEFAULT_GROUP_SIZE, DEFAULT_SEED};
use crate::catalog::{RoleCatalog, DEEPSEEK, LLAMA, QWEN};
use crate::error::GenError;
use crate::ids::{PrefixGroup, QueryId, StageId};
use crate::workflow::{annotate_topology, Platform, Query, RoleKind, Stage, WorkflowDag, WorkflowInstance};

pub const CONFLICT_RATIOS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];
pub const PREFIX_TEMPLATES: [&str; 4] = ["fanout", "chain", "diamond", "tree"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteKind {
    PrefixReuse,
    Conflict,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub kind: SuiteKind,
    pub repeat_ratio: f64,
    pub prefix_length: u32,
    pub group_size: usize,
    pub chain_length: usize,
    pub width: usize,
    pub depth: usize,
    pub density: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub label: Option<String>,
}

impl SuiteSpec {
    pub fn new(kind: SuiteKind) -> Self {
        Self {
            kind,
            repeat_ratio: 0.0,
            prefix_length: 768,
            group_size: DEFAULT_GROUP_SIZE,
            chain_length: 12,
            width: 3,
            depth: 4,
            density: 0.5,
            batch_size: 16,
            seed: DEFAULT_SEED,
            label: None,
        }
    }

    fn check(&self) -> Result<(), GenError> {
        if !(0.0..=1.0).contains(&self.repeat_ratio) {
            return Err(GenError::Lift(format!("repeat_ratio {} outside [0, 1]", self.repeat_ratio)));
        }
        if self.batch_size == 0 || self.group_size == 0 {
            return Err(GenError::Lift("batch_size and group_size must be positive".into()));
        }
        Ok(())
    }
}

/// Query batch shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub batch_size: usize,
    pub repeat_ratio: f64,
    pub group_size: usize,
    pub prefix_length: u32,
    pub min_suffix: u32,
    pub max_suffix: u32,
}

impl QueryPlan {
    pub fn new(batch_size: usize) -> Self {
        Self { batch_size, repeat_ratio: 0.0, group_size: DEFAULT_GROUP_SIZE, prefix_length: 0, min_suffix: 200, max_suffix: 600 }
    }
}

/// `floor(r * batch)` leading queries are grouped in runs of `group_size`; the rest
/// are ungrouped. Prompt lengths depend only on `(key, seed)`, not on the ratio.
pub fn make_queries(key: &str, plan: &QueryPlan, seed: u64) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(key, "queries", seed));
    let grouped = (plan.repeat_ratio * plan.batch_size as f64).floor() as usize;
    (0..plan.batch_size)
        .map(|i| {
            let suffix = rng.gen_range(plan.min_suffix..=plan.max_suffix.max(plan.min_suffix));
            let group = (i < grouped).then(|| PrefixGroup::new(format!("{key}/g{}", i / plan.group_size.max(1))));
            Query {
                id: QueryId::new(format!("q{i:03}")),
                prompt_tokens: plan.prefix_length + suffix,
                prefix_tokens: if group.is_some() { plan.prefix_length } else { 0 },
                prefix_group: group,
            }
        })
        .collect()
}

fn plan_of(spec: &SuiteSpec, ratio: f64, min_suffix: u32, max_suffix: u32) -> QueryPlan {
    QueryPlan {
        batch_size: spec.batch_size,
        repeat_ratio: ratio,
        group_size: spec.group_size,
        prefix_length: spec.prefix_length,
        min_suffix,
        max_suffix,
    }
}

type Shape<'a> = &'a [(&'a str, RoleKind, &'a [&'a str])];

fn template_shape(name: &str) -> Shape<'static> {
    use RoleKind::*;
    match name {
        "fanout" => &[
            ("prep", PromptPrep, &[]),
            ("w1", Worker, &["prep"]),
            ("w2", Worker, &["prep"]),
            ("w3", Worker, &["prep"]),
            ("w4", Worker, &["prep"]),
            ("merge", Merge, &["w1", "w2", "w3", "w4"]),
            ("final", FinalSynthesis, &["merge"]),
        ],
        "chain" => &[
            ("retrieve", Retrieval, &[]),
            ("work", Worker, &["retrieve"]),
            ("summarize", Summarization, &["work"]),
            ("verify", Verification, &["summarize"]),
        ],
        "diamond" => &[
            ("prep", PromptPrep, &[]),
            ("left", Worker, &["prep"]),
            ("right", Worker, &["prep"]),
            ("agg", Aggregation, &["left", "right"]),
            ("validate", Validation, &["agg"]),
        ],
        _ => &[
            ("plan", Decomposition, &[]),
            ("a", Worker, &["plan"]),
            ("b", Worker, &["plan"]),
            ("a2", Summarization, &["a"]),
            ("b2", Summarization, &["b"]),
            ("merge", Merge, &["a2", "b2"]),
        ],
    }
}

fn shaped_dag(wf: &str, family: &str, shape: Shape<'_>, roles: &RoleCatalog) -> Result<WorkflowDag, GenError> {
    let stages = shape.iter().map(|(id, kind, _)| {
        let e = roles.get(*kind);
        Stage {
            id: StageId::from(*id),
            model: Default::default(),
            eligible_devices: BTreeSet::new(),
            shard_bound: e.shard_bound,
            role: e.template.clone(),
            prompt_token_proxy: e.template.max_token_proxy,
            output_token_proxy: e.template.output_size_proxy,
            shared_prefix_group: Some(PrefixGroup::new(format!("{wf}/ctx"))),
            keep_cache: e.template.default_keep_cache,
            cache_reuse: true,
            base_cost_override: None,
        }
    });
    let edges = shape
        .iter()
        .flat_map(|(id, _, ps)| ps.iter().map(move |p| (StageId::from(*p), StageId::from(*id))));
    Ok(annotate_topology(&WorkflowDag::new(wf, family, stages, edges))?)
}

/// The four prefix-reuse templates at `spec.repeat_ratio`, on a single pinned model.
pub fn build_prefix_suite(spec: &SuiteSpec, platform: &Platform, roles: &RoleCatalog) -> Result<Vec<WorkflowInstance>, GenError> {
    spec.check()?;
    PREFIX_TEMPLATES
        .iter()
        .map(|t| {
            let key = format!("prefix-{t}-b{}", spec.batch_size);
            let wf = format!("{key}-r{}", spec.repeat_ratio);
            let dag = shaped_dag(&wf, "prefix", template_shape(t), roles)?;
            let dag = assign_models(&dag, spec.seed, &ModelTrack::Pinned(QWEN.into()), platform, roles)?;
            let queries = make_queries(&key, &plan_of(spec, spec.repeat_ratio, 64, 192), spec.seed);
            Ok(WorkflowInstance::new(dag, queries)?)
        })
        .collect()
}

/// One model-alternating chain per ratio in [`CONFLICT_RATIOS`].
pub fn build_conflict_suite(spec: &SuiteSpec, platform: &Platform, roles: &RoleCatalog) -> Result<Vec<WorkflowInstance>, GenError> {
    spec.check()?;
    let models = [QWEN, DEEPSEEK, LLAMA];
    let n = spec.chain_length.max(1);
    CONFLICT_RATIOS
        .iter()
        .map(|&ratio| {
            let key = format!("conflict-c{n}-b{}", spec.batch_size);
            let wf = format!("{key}-r{ratio}");
            let entry = roles.get(RoleKind::Worker);
            let mut role = entry.template.clone();
            role.comm_weight = 0.5;
            let mut stages = Vec::with_capacity(n);
            for i in 0..n {
                let model = platform
                    .models
                    .get(&models[i % models.len()].into())
                    .ok_or_else(|| GenError::Lift(format!("model {} missing", models[i % 3])))?;
                let eligible = platform
                    .topology
                    .devices
                    .iter()
                    .filter(|d| d.memory_gb >= model.memory_gb * entry.memory_factor)
                    .map(|d| d.id.clone())
                    .collect();
                stages.push(Stage {
                    id: StageId::new(format!("c{i:02}")),
                    model: model.alias.clone(),
                    eligible_devices: eligible,
                    shard_bound: entry.shard_bound,
                    role: role.clone(),
                    prompt_token_proxy: 256,
                    output_token_proxy: 32,
                    shared_prefix_group: Some(PrefixGroup::new(format!("{wf}/ctx"))),
                    keep_cache: true,
                    cache_reuse: true,
                    base_cost_override: None,
                });
            }
            let edges = (1..n).map(|i| (StageId::new(format!("c{:02}", i - 1)), StageId::new(format!("c{i:02}"))));
            let dag = annotate_topology(&WorkflowDag::new(wf, "conflict", stages, edges))?;
            let mut plan = plan_of(spec, ratio, 64, 128);
            plan.prefix_length = spec.prefix_length.min(128);
            Ok(WorkflowInstance::new(dag, make_queries(&key, &plan, spec.seed))?)
        })
        .collect()
}

/// Lifted family instances plus layered synthetic DAGs at every batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MainSuiteSpec {
    pub batch_sizes: Vec<usize>,
    pub families: Vec<String>,
    pub variants: usize,
    pub synthetic: usize,
    pub repeat_ratio: f64,
    pub prefix_length: u32,
    pub seed: u64,
}

impl Default for MainSuiteSpec {
    fn default() -> Self {
        Self {
            batch_sizes: vec![16, 32],
            families: super::families::FAMILIES.iter().map(|f| f.to_string()).collect(),
            variants: 4,
            synthetic: 8,
            repeat_ratio: 0.25,
            prefix_length: 256,
            seed: DEFAULT_SEED,
        }
    }
}

/// Shapes of the synthetic part of the main suite: (depth, width, density).
const SYNTH_SHAPES: [(usize, usize, f64); 8] =
    [(4, 3, 0.5), (5, 4, 0.4), (3, 6, 0.3), (6, 2, 0.7), (4, 5, 0.6), (8, 3, 0.4), (5, 5, 0.3), (3, 8, 0.5)];

pub fn build_main_suite(spec: &MainSuiteSpec, platform: &Platform, roles: &RoleCatalog) -> Result<Vec<WorkflowInstance>, GenError> {
    let mut out = Vec::new();
    for &batch in &spec.batch_sizes {
        let plan = QueryPlan {
            batch_size: batch,
            repeat_ratio: spec.repeat_ratio,
            group_size: DEFAULT_GROUP_SIZE,
            prefix_length: spec.prefix_length,
            min_suffix: 200,
            max_suffix: 600,
        };
        for family in &spec.families {
            for v in 0..spec.variants {
                let doc = super::families::family_document(family, v)
                    .ok_or_else(|| GenError::Import(format!("unknown family {family}")))?;
                let params = super::LiftParams { family: family.clone(), seed: spec.seed, ..Default::default() };
                out.push(super::instance_from_document(&doc, &format!("{family}-v{v}"), &params, &plan, platform, roles)?);
            }
        }
        for i in 0..spec.synthetic {
            let (depth, width, density) = SYNTH_SHAPES[i % SYNTH_SHAPES.len()];
            let s = SuiteSpec {
                depth,
                width,
                density,
                batch_size: batch,
                seed: spec.seed + i as u64,
                label: Some(format!("synth-{i}")),
                ..SuiteSpec::new(SuiteKind::Synthetic)
            };
            let dag = synth_generate(&s, platform, roles)?;
            let qs = make_queries(dag.workflow_id(), &plan, spec.seed);
            out.push(WorkflowInstance::new(dag, qs)?);
        }
    }
    Ok(out)
}

/// Layered random DAG with consecutive-layer edges kept with probability `density`.
/// Every non-source node keeps at least one parent.
pub fn synth_generate(spec: &SuiteSpec, platform: &Platform, roles: &RoleCatalog) -> Result<WorkflowDag, GenError> {
    spec.check()?;
    let (depth, width) = (spec.depth.max(1), spec.width.max(1));
    let wf = spec
        .label
        .clone()
        .unwrap_or_else(|| format!("synth-d{depth}-w{width}-p{}-s{}", spec.density, spec.seed));
    let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&wf, "synth", spec.seed));
    let id = |l: usize, i: usize| StageId::new(format!("n{l}_{i}"));
    let template = roles.get(RoleKind::Worker).template.clone();
    let mut stages = Vec::new();
    let mut edges = Vec::new();
    for l in 0..depth {
        for i in 0..width {
            stages.push(Stage {
                id: id(l, i),
                model: Default::default(),
                eligible_devices: BTreeSet::new(),
                shard_bound: 1,
                role: template.clone(),
                prompt_token_proxy: template.max_token_proxy,
                output_token_proxy: template.output_size_proxy,
                shared_prefix_group: None,
                keep_cache: false,
                cache_reuse: false,
                base_cost_override: None,
            });
            if l == 0 {
                continue;
            }
            let before = edges.len();
            for p in 0..width {
                if rng.gen::<f64>() < spec.density {
                    edges.push((id(l - 1, p), id(l, i)));
                }
            }
            if edges.len() == before {
                edges.push((id(l - 1, rng.gen_range(0..width)), id(l, i)));
            }
        }
    }
    let dag = annotate_topology(&WorkflowDag::new(wf, "synthetic", stages, edges))?;
    finalize(&dag, spec.seed, &ModelTrack::Mixed, platform, roles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::default_platform;
    use crate::workflow::validate_dag;

    fn spec(kind: SuiteKind) -> SuiteSpec {
        SuiteSpec::new(kind)
    }

    fn distinct_groups(qs: &[Query]) -> usize {
        qs.iter().filter_map(|q| q.prefix_group.clone()).collect::<BTreeSet<_>>().len()
    }

    #[test]
    fn zero_ratio_has_no_sharing() {
        let qs = make_queries("k", &QueryPlan::new(16), 1);
        assert!(qs.iter().all(|q| q.prefix_group.is_none() && q.prefix_tokens == 0));
    }

    #[test]
    fn full_ratio_batch_16_gives_four_groups_of_four() {
        let plan = QueryPlan { repeat_ratio: 1.0, prefix_length: 100, ..QueryPlan::new(16) };
        let qs = make_queries("k", &plan, 1);
        assert_eq!(distinct_groups(&qs), 4);
        for g in 0..4 {
            let label = PrefixGroup::new(format!("k/g{g}"));
            assert_eq!(qs.iter().filter(|q| q.prefix_group.as_ref() == Some(&label)).count(), 4);
        }
    }

    #[test]
    fn half_ratio_batch_32_groups_sixteen() {
        let plan = QueryPlan { repeat_ratio: 0.5, ..QueryPlan::new(32) };
        assert_eq!(make_queries("k", &plan, 1).iter().filter(|q| q.prefix_group.is_some()).count(), 16);
    }

    #[test]
    fn prompt_lengths_do_not_depend_on_ratio() {
        let a = make_queries("k", &QueryPlan { repeat_ratio: 0.0, ..QueryPlan::new(16) }, 3);
        let b = make_queries("k", &QueryPlan { repeat_ratio: 1.0, ..QueryPlan::new(16) }, 3);
        assert!(a.iter().zip(&b).all(|(x, y)| x.prompt_tokens == y.prompt_tokens));
    }

    #[test]
    fn prefix_suite_templates_validate() {
        let p = default_platform();
        let r = RoleCatalog::default();
        let s = SuiteSpec { repeat_ratio: 0.5, ..spec(SuiteKind::PrefixReuse) };
        let insts = build_prefix_suite(&s, &p, &r).unwrap();
        assert_eq!(insts.len(), 4);
        for i in &insts {
            assert!(crate::workflow::validate_against(&i.dag, &p).is_ok());
            assert_eq!(i.queries.iter().filter(|q| q.prefix_group.is_some()).count(), 8);
        }
    }

    #[test]
    fn conflict_chain_shape() {
        let p = default_platform();
        let insts = build_conflict_suite(&spec(SuiteKind::Conflict), &p, &RoleCatalog::default()).unwrap();
        assert_eq!(insts.len(), 4);
        let d = &insts[0].dag;
        assert_eq!(d.len(), 12);
        let models: Vec<String> = d.stages().map(|s| s.model.to_string()).collect();
        for (i, m) in models.iter().enumerate() {
            assert_eq!(m, &models[i % 3]);
        }
        for m in [QWEN, DEEPSEEK, LLAMA] {
            assert_eq!(models.iter().filter(|x| x.as_str() == m).count(), 4);
        }
        assert!(d.stages().skip(1).all(|s| d.parents(&s.id).len() == 1));
        assert!(d.stages().all(|s| s.keep_cache && s.shared_prefix_group.is_some()));
    }

    #[test]
    fn synth_shapes() {
        let p = default_platform();
        let r = RoleCatalog::default();
        let one = synth_generate(&SuiteSpec { depth: 1, width: 1, ..spec(SuiteKind::Synthetic) }, &p, &r).unwrap();
        assert_eq!(one.len(), 1);
        let full = SuiteSpec { depth: 4, width: 3, density: 1.0, ..spec(SuiteKind::Synthetic) };
        let d = synth_generate(&full, &p, &r).unwrap();
        assert_eq!(d.len(), 12);
        assert_eq!(d.edges().len(), 27);
        assert!(validate_dag(&d).is_ok());
        let again = synth_generate(&full, &p, &r).unwrap();
        assert_eq!(d.to_json(), again.to_json());
    }
}
