//! Default model profiles, role templates and device topology.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::workflow::{DeviceSpec, DeviceTopology, ModelCatalog, ModelProfile, Platform, RoleKind, StageRole};

pub const QWEN: &str = "qwen2.5-7b";
pub const DEEPSEEK: &str = "deepseek-7b";
pub const LLAMA: &str = "llama3.1-8b";

pub fn default_models() -> ModelCatalog {
    let p = |alias: &str, memory_gb, prefill_coeff, decode_coeff, switch_penalty| ModelProfile {
        alias: alias.into(),
        memory_gb,
        prefill_coeff,
        decode_coeff,
        switch_penalty,
    };
    ModelCatalog::new([
        p(QWEN, 15.2, 0.30, 0.008, 12.0),
        p(DEEPSEEK, 13.8, 0.28, 0.009, 11.0),
        p(LLAMA, 16.1, 0.34, 0.010, 13.0),
    ])
    .expect("default catalog is valid")
}

pub fn default_topology() -> DeviceTopology {
    let d = |id: &str, speed_factor, memory_gb| DeviceSpec { id: id.into(), speed_factor, memory_gb };
    DeviceTopology::new(
        vec![d("d0", 1.25, 48.0), d("d1", 1.0, 24.0), d("d2", 1.0, 24.0), d("d3", 0.8, 16.0)],
        20.0,
    )
    .expect("default topology is valid")
}

pub fn default_platform() -> Platform {
    Platform { topology: default_topology(), models: default_models() }
}

/// Role template table plus model candidates and the memory factor used for eligibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleCatalog {
    pub roles: BTreeMap<RoleKind, RoleEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleEntry {
    pub template: StageRole,
    pub candidates: Vec<String>,
    /// Multiplier on model memory when checking device capacity.
    pub memory_factor: f64,
    /// Shard bound for shard-eligible roles.
    pub shard_bound: u32,
}

impl RoleCatalog {
    pub fn get(&self, kind: RoleKind) -> &RoleEntry {
        &self.roles[&kind]
    }
}

impl Default for RoleCatalog {
    fn default() -> Self {
        use RoleKind::*;
        #[rustfmt::skip]
        let rows: [(RoleKind, f64, f64, f64, u32, u32, f64, bool, bool, bool, &[&str], f64); 11] = [
            (PromptPrep,     0.6, 1.0, 0.5,  512, 128, 0.8, true,  false, true,  &[QWEN, DEEPSEEK], 1.0),
            (Retrieval,      0.8, 1.2, 0.6, 1024, 256, 1.2, true,  true,  true,  &[QWEN, DEEPSEEK], 1.0),
            (Routing,        0.5, 0.8, 0.4,  256,  64, 0.6, false, false, true,  &[QWEN, DEEPSEEK], 1.0),
            (Decomposition,  0.9, 1.0, 0.8,  768, 192, 1.0, true,  false, true,  &[QWEN, DEEPSEEK], 1.0),
            (Worker,         1.0, 1.0, 1.0, 1024, 256, 1.0, false, true,  true,  &[QWEN, DEEPSEEK, LLAMA], 1.0),
            (Merge,          1.1, 1.2, 0.9, 1536, 256, 1.4, false, false, false, &[QWEN, LLAMA], 1.5),
            (Aggregation,    1.0, 1.1, 0.9, 1536, 256, 1.3, false, false, false, &[QWEN, LLAMA], 1.5),
            (Summarization,  0.9, 1.0, 1.0, 1024, 192, 1.0, false, true,  true,  &[LLAMA, QWEN], 1.0),
            (Validation,     0.7, 0.9, 0.6,  768,  96, 0.8, false, true,  true,  &[LLAMA, DEEPSEEK], 1.0),
            (Verification,   0.8, 0.9, 0.7,  768, 128, 0.9, false, true,  true,  &[LLAMA, DEEPSEEK], 1.0),
            (FinalSynthesis, 1.2, 1.1, 1.2, 1536, 320, 1.2, false, false, false, &[LLAMA, QWEN], 1.5),
        ];
        let roles = rows
            .into_iter()
            .map(|(kind, complexity, ps, ds, max_tok, out, comm, keep, reuse, shard, cands, mem)| {
                let template = StageRole {
                    kind,
                    complexity,
                    prefill_scale: ps,
                    decode_scale: ds,
                    max_token_proxy: max_tok,
                    output_size_proxy: out,
                    comm_weight: comm,
                    default_keep_cache: keep,
                    default_cache_reuse: reuse,
                    shard_eligible: shard,
                };
                let entry = RoleEntry {
                    template,
                    candidates: cands.iter().map(|s| s.to_string()).collect(),
                    memory_factor: mem,
                    shard_bound: if shard { 2 } else { 1 },
                };
                (kind, entry)
            })
            .collect();
        Self { roles }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let roles = RoleCatalog::default();
        assert_eq!(roles.roles.len(), 11);
        for (kind, e) in &roles.roles {
            assert!(!e.candidates.is_empty());
            if kind.is_merge_or_final() {
                assert!(!e.template.shard_eligible);
                assert_eq!(e.shard_bound, 1);
            }
            for c in &e.candidates {
                assert!(default_models().get(&c.as_str().into()).is_some());
            }
        }
        let t = default_topology();
        assert_eq!(t.beta(&"d0".into(), &"d0".into()), 0.0);
        assert_eq!(t.beta(&"d0".into(), &"d1".into()), 20.0);
    }
}
