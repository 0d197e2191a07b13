//! Benchmark workload generation: raw workflow import, DAG lifting, role and
//! model assignment, controlled suites and synthetic DAGs.

mod assign;
mod families;
mod import;
mod lift;
mod suites;

pub use assign::{assign_models, assign_roles, finalize, ModelTrack};
pub use families::{family_document, FAMILIES};
pub use import::{import_workflow_json, RawTask, RawTaskDag};
pub use lift::{lift_dag, normalize_name, LiftParams};
pub use suites::{
    build_conflict_suite, build_main_suite, build_prefix_suite, make_queries, MainSuiteSpec, synth_generate, QueryPlan, SuiteKind, SuiteSpec,
    CONFLICT_RATIOS, PREFIX_TEMPLATES,
};

use crate::catalog::RoleCatalog;
use crate::error::GenError;
use crate::workflow::{Platform, WorkflowInstance};

pub const DEFAULT_SEED: u64 = 20260423;
pub const DEFAULT_GROUP_SIZE: usize = 4;

/// FNV-1a 64 over the UTF-8 bytes of `"{workflow}|{stage}|{seed}"`.
pub fn stable_hash(workflow: &str, stage: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in format!("{workflow}|{stage}|{seed}").bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Import, lift, assign roles and models, and attach a query batch.
pub fn instance_from_document(
    document: &str,
    workflow_id: &str,
    params: &LiftParams,
    queries: &QueryPlan,
    platform: &Platform,
    roles: &RoleCatalog,
) -> Result<WorkflowInstance, GenError> {
    let raw = import_workflow_json(document, workflow_id)?;
    let lifted = lift_dag(&raw, params)?;
    let dag = finalize(&lifted, params.seed, &ModelTrack::Mixed, platform, roles)?;
    let qs = make_queries(workflow_id, queries, params.seed);
    Ok(WorkflowInstance::new(dag, qs)?)
}
