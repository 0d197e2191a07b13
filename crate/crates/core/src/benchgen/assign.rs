use serde::{Deserialize, Serialize};

use super::stable_hash;
use crate::catalog::RoleCatalog;
use crate::error::{DagError, GenError};
use crate::ids::{ModelAlias, PrefixGroup};
use crate::workflow::{validate_against, Platform, RoleKind, WorkflowDag};

const EARLY: [RoleKind; 4] = [RoleKind::PromptPrep, RoleKind::Retrieval, RoleKind::Routing, RoleKind::Decomposition];
const MERGE: [RoleKind; 2] = [RoleKind::Merge, RoleKind::Aggregation];
const LATE: [RoleKind; 4] =
    [RoleKind::Summarization, RoleKind::Validation, RoleKind::Verification, RoleKind::FinalSynthesis];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTrack {
    /// Pick from each role's candidate set by stable hash.
    Mixed,
    /// Every stage uses one alias.
    Pinned(String),
}

fn bucket_of(dag: &WorkflowDag, id: &crate::ids::StageId) -> (&'static str, &'static [RoleKind]) {
    let a = dag.annotation(id).expect("assign_roles needs annotations");
    let max_level = dag.max_level();
    if a.indegree == 0 {
        ("early", &EARLY)
    } else if a.indegree >= 2 && (a.indegree >= 3 || 2 * a.indegree >= a.level_width) {
        ("merge", &MERGE)
    } else if a.outdegree == 0 || a.level == max_level {
        ("late", &LATE)
    } else if a.level <= 1 && a.level_width >= 3 {
        ("early", &EARLY)
    } else {
        ("worker", &[RoleKind::Worker])
    }
}

/// Structural role rules; the choice inside a bucket uses the stable hash.
pub fn assign_roles(dag: &WorkflowDag, seed: u64, roles: &RoleCatalog) -> Result<WorkflowDag, GenError> {
    if !dag.is_annotated() {
        return Err(GenError::Lift(format!("{}: annotations missing", dag.workflow_id())));
    }
    let wf = dag.workflow_id().to_string();
    let ids: Vec<_> = dag.stage_ids().cloned().collect();
    let mut out = dag.clone();
    for id in ids {
        let (bucket, kinds) = bucket_of(dag, &id);
        let kind = kinds[(stable_hash(&wf, id.as_str(), seed) % kinds.len() as u64) as usize];
        let entry = roles.get(kind);
        let s = out.stage_mut(&id).unwrap();
        s.role = entry.template.clone();
        s.shard_bound = entry.shard_bound;
        s.keep_cache = entry.template.default_keep_cache;
        s.cache_reuse = entry.template.default_cache_reuse;
        s.prompt_token_proxy = entry.template.max_token_proxy;
        s.output_token_proxy = entry.template.output_size_proxy;
        s.shared_prefix_group = (s.keep_cache || s.cache_reuse).then(|| PrefixGroup::new(format!("{wf}/{bucket}")));
    }
    Ok(out)
}

/// Model choice per stage plus memory-derived eligibility.
pub fn assign_models(
    dag: &WorkflowDag,
    seed: u64,
    track: &ModelTrack,
    platform: &Platform,
    roles: &RoleCatalog,
) -> Result<WorkflowDag, GenError> {
    let wf = dag.workflow_id().to_string();
    let ids: Vec<_> = dag.stage_ids().cloned().collect();
    let mut out = dag.clone();
    for id in ids {
        let s = out.stage_mut(&id).unwrap();
        let entry = roles.get(s.role.kind);
        let alias = match track {
            ModelTrack::Pinned(a) => a.clone(),
            ModelTrack::Mixed => {
                if entry.candidates.is_empty() {
                    return Err(GenError::Lift(format!("role {} has no candidate models", s.role.kind.as_str())));
                }
                // Next mixed-radix digit of the hash that picked the role.
                let radix = if dag.is_annotated() { bucket_of(dag, &id).1.len() as u64 } else { 1 };
                let h = stable_hash(&wf, id.as_str(), seed) / radix;
                entry.candidates[(h % entry.candidates.len() as u64) as usize].clone()
            }
        };
        let model = platform
            .models
            .get(&ModelAlias::new(alias.clone()))
            .ok_or_else(|| GenError::Dag(DagError::InvalidModel(alias.clone())))?;
        let need = model.memory_gb * entry.memory_factor;
        s.model = model.alias.clone();
        s.eligible_devices =
            platform.topology.devices.iter().filter(|d| d.memory_gb >= need).map(|d| d.id.clone()).collect();
        if s.eligible_devices.is_empty() {
            return Err(GenError::Lift(format!("stage {id}: no device can hold {alias}")));
        }
    }
    Ok(out)
}

/// Roles, models and a final validation pass.
pub fn finalize(
    lifted: &WorkflowDag,
    seed: u64,
    track: &ModelTrack,
    platform: &Platform,
    roles: &RoleCatalog,
) -> Result<WorkflowDag, GenError> {
    let dag = assign_models(&assign_roles(lifted, seed, roles)?, seed, track, platform, roles)?;
    let report = validate_against(&dag, platform);
    if let Some(v) = report.violations.first() {
        return Err(GenError::Dag(DagError::Invalid {
            workflow: dag.workflow_id().to_string(),
            detail: format!("{}: {} ({})", v.kind.label(), v.subject, v.detail),
        }));
    }
    Ok(dag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::default_platform;
    use crate::workflow::annotate_topology;
    use crate::workflow::tests::dag;

    fn fanout(n: usize) -> WorkflowDag {
        let mut ids = vec!["src".to_string()];
        ids.extend((0..n).map(|i| format!("w{i}")));
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let edges: Vec<(&str, &str)> = refs[1..].iter().map(|w| ("src", *w)).collect();
        annotate_topology(&dag(&refs, &edges)).unwrap()
    }

    #[test]
    fn source_with_outdegree_five_is_early() {
        let d = assign_roles(&fanout(5), 20260423, &RoleCatalog::default()).unwrap();
        assert!(EARLY.contains(&d.stage(&"src".into()).unwrap().role.kind));
    }

    #[test]
    fn sink_with_indegree_four_is_merge_or_late() {
        let d = annotate_topology(&dag(
            &["a", "b", "c", "e", "s"],
            &[("a", "s"), ("b", "s"), ("c", "s"), ("e", "s")],
        ))
        .unwrap();
        let d = assign_roles(&d, 1, &RoleCatalog::default()).unwrap();
        let k = d.stage(&"s".into()).unwrap().role.kind;
        assert!(MERGE.contains(&k) || LATE.contains(&k));
    }

    #[test]
    fn roles_are_deterministic() {
        let r = RoleCatalog::default();
        let a = assign_roles(&fanout(6), 5, &r).unwrap();
        let b = assign_roles(&fanout(6), 5, &r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singleton_candidates_and_pinned_track() {
        let p = default_platform();
        let r = RoleCatalog::default();
        let roled = assign_roles(&fanout(3), 9, &r).unwrap();
        let mut single = r.clone();
        for e in single.roles.values_mut() {
            e.candidates = vec!["deepseek-7b".into()];
        }
        let d = assign_models(&roled, 9, &ModelTrack::Mixed, &p, &single).unwrap();
        assert!(d.stages().all(|s| s.model.as_str() == "deepseek-7b"));
        let d = assign_models(&roled, 9, &ModelTrack::Pinned("llama3.1-8b".into()), &p, &r).unwrap();
        assert!(d.stages().all(|s| s.model.as_str() == "llama3.1-8b"));
        assert!(d.stages().all(|s| !s.eligible_devices.contains("d3")));
    }

    #[test]
    fn seed_changes_some_model() {
        let p = default_platform();
        let r = RoleCatalog::default();
        let roled = assign_roles(&fanout(19), 1, &r).unwrap();
        let a = assign_models(&roled, 20260423, &ModelTrack::Mixed, &p, &r).unwrap();
        let b = assign_models(&roled, 20260424, &ModelTrack::Mixed, &p, &r).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.stages().zip(b.stages()).any(|(x, y)| x.model != y.model));
    }
}
