use std::collections::BTreeSet;

use proptest::prelude::*;
use wfsched_core::ids::StageId;
use wfsched_core::workflow::{annotate_topology, ready_set, validate_dag, RoleKind, Stage, StageRole, WorkflowDag};

fn stage(id: &str) -> Stage {
    Stage {
        id: id.into(),
        model: "m".into(),
        eligible_devices: ["d0".into()].into_iter().collect(),
        shard_bound: 1,
        role: StageRole {
            kind: RoleKind::Worker,
            complexity: 1.0,
            prefill_scale: 1.0,
            decode_scale: 1.0,
            max_token_proxy: 0,
            output_size_proxy: 0,
            comm_weight: 1.0,
            default_keep_cache: false,
            default_cache_reuse: false,
            shard_eligible: true,
        },
        prompt_token_proxy: 0,
        output_token_proxy: 0,
        shared_prefix_group: None,
        keep_cache: false,
        cache_reuse: false,
        base_cost_override: None,
    }
}

fn id(i: usize) -> StageId {
    StageId::new(format!("s{i:02}"))
}

/// Forward edges only, so the graph is acyclic by construction.
fn random_dag() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..=12).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let k = pairs.len();
        (Just(n), proptest::collection::vec(any::<bool>(), k)).prop_map(move |(n, keep)| {
            (n, pairs.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect())
        })
    })
}

fn build(n: usize, edges: &[(usize, usize)], reversed: bool) -> WorkflowDag {
    let mut ids: Vec<usize> = (0..n).collect();
    let mut es = edges.to_vec();
    if reversed {
        ids.reverse();
        es.reverse();
    }
    WorkflowDag::new("wf", "t", ids.iter().map(|i| stage(id(*i).as_str())), es.iter().map(|(a, b)| (id(*a), id(*b))))
}

fn longest_from_sources(v: usize, edges: &[(usize, usize)]) -> u32 {
    edges.iter().filter(|(_, b)| *b == v).map(|(a, _)| longest_from_sources(*a, edges) + 1).max().unwrap_or(0)
}

fn longest_to_sinks(v: usize, edges: &[(usize, usize)]) -> u32 {
    edges.iter().filter(|(a, _)| *a == v).map(|(_, b)| longest_to_sinks(*b, edges) + 1).max().unwrap_or(0)
}

proptest! {
    #[test]
    fn annotations_match_longest_paths((n, edges) in random_dag()) {
        let dag = annotate_topology(&build(n, &edges, false)).unwrap();
        prop_assert!(validate_dag(&dag).is_ok());
        let levels: Vec<u32> = (0..n).map(|v| longest_from_sources(v, &edges)).collect();
        for v in 0..n {
            let a = dag.annotation(&id(v)).unwrap();
            prop_assert_eq!(a.level, levels[v]);
            prop_assert_eq!(a.reverse_depth, longest_to_sinks(v, &edges));
            prop_assert_eq!(a.indegree as usize, edges.iter().filter(|(_, b)| *b == v).count());
            prop_assert_eq!(a.outdegree as usize, edges.iter().filter(|(x, _)| *x == v).count());
            prop_assert_eq!(a.level_width as usize, levels.iter().filter(|l| **l == levels[v]).count());
        }
    }

    #[test]
    fn annotation_is_idempotent_and_order_free((n, edges) in random_dag()) {
        let once = annotate_topology(&build(n, &edges, false)).unwrap();
        let twice = annotate_topology(&once).unwrap();
        let reordered = annotate_topology(&build(n, &edges, true)).unwrap();
        prop_assert_eq!(once.annotations(), twice.annotations());
        prop_assert_eq!(once.annotations(), reordered.annotations());
    }

    #[test]
    fn ready_set_drains_every_dag((n, edges) in random_dag(), hold in proptest::collection::vec(any::<bool>(), 12)) {
        let dag = annotate_topology(&build(n, &edges, false)).unwrap();
        let mut completed = BTreeSet::new();
        let none = BTreeSet::new();
        let mut rounds = 0;
        while completed.len() < n {
            // a committed subset never reappears in the ready set
            let committed: BTreeSet<StageId> = (0..n).filter(|i| hold[*i] && !completed.contains(&id(*i))).map(id).collect();
            let partial = ready_set(&dag, &completed, &none, &committed);
            prop_assert!(partial.iter().all(|v| !completed.contains(v) && !committed.contains(v)));
            let ready = ready_set(&dag, &completed, &none, &none);
            prop_assert!(!ready.is_empty());
            for v in &ready {
                prop_assert!(dag.parents(v).iter().all(|u| completed.contains(u)));
            }
            completed.extend(ready);
            rounds += 1;
            prop_assert!(rounds <= n);
        }
        prop_assert_eq!(rounds as u32, dag.max_level() + 1);
    }

    #[test]
    fn json_round_trip((n, edges) in random_dag()) {
        let dag = annotate_topology(&build(n, &edges, false)).unwrap();
        let back = WorkflowDag::from_json(&dag.to_json()).unwrap();
        prop_assert_eq!(&back, &dag);
        prop_assert_eq!(back.to_json(), dag.to_json());
    }
}

#[test]
fn ready_set_examples() {
    let dag = annotate_topology(&WorkflowDag::new(
        "wf",
        "t",
        ["A", "B", "C", "D"].map(stage),
        [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")].map(|(a, b)| (StageId::from(a), StageId::from(b))),
    ))
    .unwrap();
    let set = |xs: &[&str]| xs.iter().map(|x| StageId::from(*x)).collect::<BTreeSet<_>>();
    assert_eq!(ready_set(&dag, &set(&[]), &set(&[]), &set(&[])), set(&["A"]));
    assert_eq!(ready_set(&dag, &set(&["A"]), &set(&[]), &set(&[])), set(&["B", "C"]));
    assert_eq!(ready_set(&dag, &set(&["A"]), &set(&[]), &set(&["B"])), set(&["C"]));
    assert_eq!(ready_set(&dag, &set(&["A"]), &set(&["C"]), &set(&[])), set(&["B"]));
}
