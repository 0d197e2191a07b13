use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::import::RawTaskDag;
use super::DEFAULT_SEED;
use crate::catalog::RoleCatalog;
use crate::error::GenError;
use crate::ids::StageId;
use crate::workflow::{annotate_topology, RoleKind, Stage, WorkflowDag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiftParams {
    pub max_stages: usize,
    pub min_groups: usize,
    pub seed: u64,
    pub family: String,
    pub prefix_collapse: bool,
}

impl Default for LiftParams {
    fn default() -> Self {
        Self { max_stages: 64, min_groups: 6, seed: DEFAULT_SEED, family: String::new(), prefix_collapse: true }
    }
}

/// Lowercase, then strip trailing `_N`, `-N` and `.N` suffixes until none is left.
pub fn normalize_name(name: &str) -> String {
    let mut s = name.to_lowercase();
    loop {
        let trimmed = s.trim_end_matches(|c: char| c.is_ascii_digit());
        if trimmed.len() == s.len() || trimmed.len() < 2 {
            return s;
        }
        let last = trimmed.as_bytes()[trimmed.len() - 1];
        if matches!(last, b'_' | b'-' | b'.') {
            s = trimmed[..trimmed.len() - 1].to_string();
        } else {
            return s;
        }
    }
}

type Groups = BTreeMap<String, Vec<usize>>;

fn task_topo(raw: &RawTaskDag, index: &BTreeMap<&str, usize>) -> Option<(Vec<usize>, Vec<u32>)> {
    let n = raw.tasks.len();
    let mut indeg = vec![0usize; n];
    let mut kids: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, t) in raw.tasks.iter().enumerate() {
        for p in &t.parents {
            let pi = index[p.as_str()];
            kids[pi].push(i);
            indeg[i] += 1;
        }
    }
    let mut ready: BTreeSet<(&str, usize)> =
        (0..n).filter(|&i| indeg[i] == 0).map(|i| (raw.tasks[i].key.as_str(), i)).collect();
    let mut order = Vec::with_capacity(n);
    let mut level = vec![0u32; n];
    while let Some((_, u)) = ready.pop_first() {
        order.push(u);
        for &w in &kids[u] {
            level[w] = level[w].max(level[u] + 1);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                ready.insert((raw.tasks[w].key.as_str(), w));
            }
        }
    }
    (order.len() == n).then_some((order, level))
}

fn quotient_edges(raw: &RawTaskDag, index: &BTreeMap<&str, usize>, groups: &Groups) -> BTreeSet<(String, String)> {
    let mut owner = vec![None; raw.tasks.len()];
    for (g, members) in groups {
        for &m in members {
            owner[m] = Some(g.as_str());
        }
    }
    let mut edges = BTreeSet::new();
    for (i, t) in raw.tasks.iter().enumerate() {
        for p in &t.parents {
            if let (Some(a), Some(b)) = (owner[index[p.as_str()]], owner[i]) {
                if a != b {
                    edges.insert((a.to_string(), b.to_string()));
                }
            }
        }
    }
    edges
}

fn group_levels(nodes: &BTreeSet<String>, edges: &BTreeSet<(String, String)>) -> Option<BTreeMap<String, u32>> {
    let mut indeg: BTreeMap<&str, usize> = nodes.iter().map(|n| (n.as_str(), 0)).collect();
    for (_, b) in edges {
        *indeg.get_mut(b.as_str())? += 1;
    }
    let mut ready: BTreeSet<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(k, _)| *k).collect();
    let mut level: BTreeMap<String, u32> = BTreeMap::new();
    let mut done = 0;
    while let Some(u) = ready.pop_first() {
        done += 1;
        let lu = *level.entry(u.to_string()).or_insert(0);
        for (a, b) in edges.range((u.to_string(), String::new())..) {
            if a != u {
                break;
            }
            let lb = level.entry(b.clone()).or_insert(0);
            *lb = (*lb).max(lu + 1);
            let d = indeg.get_mut(b.as_str()).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.insert(b.as_str());
            }
        }
    }
    (done == nodes.len()).then_some(level)
}

fn components(nodes: &BTreeSet<String>, edges: &BTreeSet<(String, String)>) -> usize {
    let ids: Vec<&String> = nodes.iter().collect();
    let pos: BTreeMap<&String, usize> = ids.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let n = p[c];
            p[c] = r;
            c = n;
        }
        r
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, pos[a]), find(&mut parent, pos[b]));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    (0..ids.len()).filter(|&i| find(&mut parent, i) == i).count()
}

fn splice_out(edges: &BTreeSet<(String, String)>, victim: &str) -> BTreeSet<(String, String)> {
    let parents: Vec<&String> = edges.iter().filter(|(_, b)| b == victim).map(|(a, _)| a).collect();
    let kids: Vec<&String> = edges.iter().filter(|(a, _)| a == victim).map(|(_, b)| b).collect();
    let mut out: BTreeSet<(String, String)> =
        edges.iter().filter(|(a, b)| a != victim && b != victim).cloned().collect();
    for p in &parents {
        for k in &kids {
            out.insert(((*p).clone(), (*k).clone()));
        }
    }
    out
}

/// Collapses raw tasks into stage groups by normalized name, preserving induced
/// dependencies, then enforces `min_groups` and `max_stages`.
pub fn lift_dag(raw: &RawTaskDag, params: &LiftParams) -> Result<WorkflowDag, GenError> {
    if params.max_stages < 1 {
        return Err(GenError::Lift("max_stages must be >= 1".into()));
    }
    if raw.tasks.is_empty() {
        return Err(GenError::Lift(format!("{}: no tasks", raw.source_file)));
    }
    let index: BTreeMap<&str, usize> = raw.tasks.iter().enumerate().map(|(i, t)| (t.key.as_str(), i)).collect();
    let (order, level) =
        task_topo(raw, &index).ok_or_else(|| GenError::Lift(format!("{}: raw graph is cyclic", raw.source_file)))?;
    let topo_pos: Vec<usize> = {
        let mut p = vec![0; order.len()];
        for (i, &t) in order.iter().enumerate() {
            p[t] = i;
        }
        p
    };

    let key_of = |i: usize| {
        if params.prefix_collapse {
            normalize_name(&raw.tasks[i].name)
        } else {
            raw.tasks[i].key.clone()
        }
    };
    let mut groups: Groups = BTreeMap::new();
    for i in 0..raw.tasks.len() {
        groups.entry(key_of(i)).or_default().push(i);
    }
    let node_set = |g: &Groups| g.keys().cloned().collect::<BTreeSet<String>>();
    if group_levels(&node_set(&groups), &quotient_edges(raw, &index, &groups)).is_none() {
        // Same-name tasks at different depths: refine by level, which is acyclic by construction.
        let mut refined: Groups = BTreeMap::new();
        for (g, members) in groups {
            let levels: BTreeSet<u32> = members.iter().map(|&m| level[m]).collect();
            for m in members {
                let id = if levels.len() > 1 { format!("{g}@{}", level[m]) } else { g.clone() };
                refined.entry(id).or_default().push(m);
            }
        }
        groups = refined;
    }
    for members in groups.values_mut() {
        members.sort_by_key(|&m| topo_pos[m]);
    }

    let mut frozen: BTreeSet<String> = BTreeSet::new();
    while groups.len() < params.min_groups {
        let pick = groups
            .iter()
            .filter(|(g, m)| m.len() >= 2 && !frozen.contains(*g))
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| b.0.cmp(a.0)))
            .map(|(g, _)| g.clone());
        let Some(g) = pick else { break };
        let members = groups.remove(&g).unwrap();
        let half = members.len().div_ceil(2);
        let (a, b) = (format!("{g}#1"), format!("{g}#2"));
        let mut trial = groups.clone();
        trial.insert(a.clone(), members[..half].to_vec());
        trial.insert(b.clone(), members[half..].to_vec());
        if group_levels(&node_set(&trial), &quotient_edges(raw, &index, &trial)).is_some() {
            groups = trial;
        } else {
            groups.insert(g.clone(), members);
            frozen.insert(g);
        }
    }

    let mut nodes = node_set(&groups);
    let mut edges = quotient_edges(raw, &index, &groups);
    while nodes.len() > params.max_stages {
        let levels = group_levels(&nodes, &edges).expect("quotient stays acyclic");
        let mut ranked: Vec<(&String, u32)> = levels.iter().map(|(g, l)| (g, *l)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| b.0.cmp(a.0)));
        let before = components(&nodes, &edges);
        let mut victim = ranked[0].0.clone();
        for (g, _) in &ranked {
            let mut rest = nodes.clone();
            rest.remove(*g);
            if components(&rest, &splice_out(&edges, g)) <= before {
                victim = (*g).clone();
                break;
            }
        }
        edges = splice_out(&edges, &victim);
        nodes.remove(&victim);
    }

    let template = RoleCatalog::default().get(RoleKind::Worker).template.clone();
    let stages = nodes.iter().map(|g| Stage {
        id: StageId::new(g.clone()),
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
    let dag = WorkflowDag::new(
        raw.source_file.clone(),
        params.family.clone(),
        stages,
        edges.into_iter().map(|(a, b)| (StageId::new(a), StageId::new(b))),
    );
    Ok(annotate_topology(&dag)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::import::RawTask;

    fn raw(tasks: &[(&str, &[&str])]) -> RawTaskDag {
        RawTaskDag {
            tasks: tasks
                .iter()
                .map(|(n, ps)| RawTask {
                    key: n.to_string(),
                    name: n.to_string(),
                    parents: ps.iter().map(|p| p.to_string()).collect(),
                })
                .collect(),
            source_file: "wf".into(),
        }
    }

    fn params(min_groups: usize) -> LiftParams {
        LiftParams { min_groups, ..LiftParams::default() }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_name("Blast_12"), "blast");
        assert_eq!(normalize_name("fasterq-dump-3"), "fasterq-dump");
        assert_eq!(normalize_name("a.2_1"), "a");
        assert_eq!(normalize_name("individuals_chr1_000001"), "individuals_chr1");
        assert_eq!(normalize_name("mAdd"), "madd");
        assert_eq!(normalize_name("_1"), "_1");
    }

    #[test]
    fn blast_collapse() {
        let r = raw(&[("blast_1", &[]), ("blast_2", &[]), ("merge", &["blast_1", "blast_2"])]);
        let d = lift_dag(&r, &params(1)).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.edges().contains(&("blast".into(), "merge".into())));
    }

    #[test]
    fn distinct_names_do_not_collapse() {
        let r = raw(&[("a", &[]), ("b", &["a"]), ("c", &["a"]), ("d", &["b", "c"])]);
        assert_eq!(lift_dag(&r, &params(1)).unwrap().len(), 4);
    }

    #[test]
    fn min_groups_splits_largest() {
        let r = raw(&[("w_1", &[]), ("w_2", &[]), ("w_3", &[]), ("w_4", &[]), ("m", &["w_1", "w_2", "w_3", "w_4"])]);
        let d = lift_dag(&r, &params(3)).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.stage(&"w#1".into()).is_some());
    }

    #[test]
    fn same_name_cycle_is_refined_by_level() {
        let r = raw(&[("x_1", &[]), ("y", &["x_1"]), ("x_2", &["y"])]);
        let d = lift_dag(&r, &params(1)).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.topo_order().is_some());
    }

    #[test]
    fn cyclic_raw_input_is_rejected() {
        let r = raw(&[("a", &["b"]), ("b", &["a"])]);
        assert!(lift_dag(&r, &params(1)).is_err());
    }

    #[test]
    fn truncation_splices_parents_to_children() {
        let r = raw(&[("a", &[]), ("b", &["a"]), ("c", &["b"]), ("d", &["c"])]);
        let d = lift_dag(&r, &LiftParams { max_stages: 2, min_groups: 1, ..LiftParams::default() }).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.edges().contains(&("a".into(), "b".into())));
    }
}
