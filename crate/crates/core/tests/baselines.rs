use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wfsched_core::benchgen::{make_queries, synth_generate, QueryPlan, SuiteKind, SuiteSpec};
use wfsched_core::catalog::{default_models, default_platform, RoleCatalog, QWEN};
use wfsched_core::cost::{CostModel, ScoreWeights};
use wfsched_core::executor::{run, ExecConfig};
use wfsched_core::ids::{DeviceId, QueryId, StageId, TaskId};
use wfsched_core::policy::{
    make_policy, BeamConfig, HaloPolicy, HeftPolicy, HelixPolicy, KvFlowPolicy, Policy, RoundRobinPolicy, SignalAccess, SolverStats,
    WaveView, POLICY_NAMES,
};
use wfsched_core::state::ExecutionState;
use wfsched_core::task::{Placement, ScheduledTask};
use wfsched_core::workflow::{
    annotate_topology, DeviceSpec, DeviceTopology, Platform, Query, RoleKind, Stage, StageRole, WorkflowDag, WorkflowInstance, Workload,
};

const DEVICES: [&str; 4] = ["d0", "d1", "d2", "d3"];

fn platform() -> Platform {
    let d = |id: &str| DeviceSpec { id: id.into(), speed_factor: 1.0, memory_gb: 48.0 };
    Platform { topology: DeviceTopology::new(DEVICES.iter().map(|i| d(i)).collect(), 20.0).unwrap(), models: default_models() }
}

fn stage(id: &str, cost: f64) -> Stage {
    Stage {
        id: id.into(),
        model: QWEN.into(),
        eligible_devices: DEVICES.iter().map(|d| DeviceId::from(*d)).collect(),
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
            shard_eligible: false,
        },
        prompt_token_proxy: 0,
        output_token_proxy: 0,
        shared_prefix_group: None,
        keep_cache: false,
        cache_reuse: false,
        base_cost_override: Some(DEVICES.iter().map(|d| (DeviceId::from(*d), cost)).collect()),
    }
}

fn workload(stages: Vec<Stage>, edges: &[(&str, &str)]) -> Workload {
    let dag = WorkflowDag::new("wf", "t", stages, edges.iter().map(|(a, b)| (StageId::from(*a), StageId::from(*b))));
    let queries = vec![Query { id: QueryId::from("q0"), prompt_tokens: 100, prefix_group: None, prefix_tokens: 0 }];
    Workload::single(&WorkflowInstance::new(annotate_topology(&dag).unwrap(), queries).unwrap())
}

/// Runs `v` alone on `d` over [t, t + 1].
fn complete(st: &mut ExecutionState, w: &Workload, v: &str, d: &str, t: f64) {
    let s = w.stage(&v.into()).unwrap();
    st.commit(&v.into(), 1).unwrap();
    let task = ScheduledTask {
        id: TaskId(t as u64),
        stage: v.into(),
        slot: 0,
        device: d.into(),
        queries: vec![QueryId::from("q0")],
        order: 0,
        issue: None,
        finish: None,
    };
    st.advance_to(t);
    st.on_task_start(&task, s, t + 1.0).unwrap();
    st.on_task_complete(task.id, t + 1.0, s, &[]).unwrap();
}

fn plan(policy: &mut dyn Policy, w: &Workload, p: &Platform, st: &ExecutionState, frontier: &[&str]) -> Vec<Placement> {
    let weights = ScoreWeights::default();
    let cm = CostModel::new(w, p, &weights);
    let f: Vec<StageId> = frontier.iter().map(|s| StageId::from(*s)).collect();
    let view = WaveView::new(&cm, st, &f, policy.signals());
    policy.plan_wave(&view)
}

fn devices_of(out: &[Placement]) -> Vec<(&str, &str)> {
    out.iter().map(|p| (p.stage.as_str(), p.device.as_str())).collect()
}

#[test]
fn round_robin_rotates_and_skips() {
    let p = platform();
    let w = workload(vec![stage("A", 5.0), stage("B", 5.0)], &[]);
    let st = ExecutionState::new(&p.topology);
    let out = plan(&mut RoundRobinPolicy::default(), &w, &p, &st, &["A", "B"]);
    assert_eq!(devices_of(&out), vec![("A", "d0"), ("B", "d1")]);

    let mut only = stage("X", 5.0);
    only.eligible_devices = ["d3".into()].into_iter().collect();
    let w = workload(vec![only], &[]);
    let out = plan(&mut RoundRobinPolicy::default(), &w, &p, &st, &["X"]);
    assert_eq!(devices_of(&out), vec![("X", "d3")]);
}

#[test]
fn round_robin_counter_persists_across_waves() {
    let p = platform();
    let w = workload(vec![stage("A", 5.0), stage("B", 5.0), stage("C", 5.0)], &[]);
    let st = ExecutionState::new(&p.topology);
    let mut rr = RoundRobinPolicy::default();
    plan(&mut rr, &w, &p, &st, &["A", "B"]);
    let out = plan(&mut rr, &w, &p, &st, &["C"]);
    assert_eq!(devices_of(&out), vec![("C", "d2")]);
}

#[test]
fn heft_chain_ranks_by_hand() {
    let p = platform();
    let c = 5.0;
    let w = workload(vec![stage("A", c), stage("B", c), stage("C", c)], &[("A", "B"), ("B", "C")]);
    let st = ExecutionState::new(&p.topology);
    let mut heft = HeftPolicy::default();
    plan(&mut heft, &w, &p, &st, &["A"]);
    assert_eq!(heft.rank(&"C".into()), c);
    assert_eq!(heft.rank(&"B".into()), 2.0 * c);
    assert_eq!(heft.rank(&"A".into()), 3.0 * c);
}

#[test]
fn heft_ranks_decrease_along_edges() {
    let p = default_platform();
    let roles = RoleCatalog::default();
    for seed in 0..20 {
        let spec = SuiteSpec { depth: 5, width: 4, density: 0.5, seed, ..SuiteSpec::new(SuiteKind::Synthetic) };
        let dag = synth_generate(&spec, &p, &roles).unwrap();
        let qs = make_queries(dag.workflow_id(), &QueryPlan::new(4), seed);
        let w = Workload::single(&WorkflowInstance::new(dag, qs).unwrap());
        let st = ExecutionState::new(&p.topology);
        let mut heft = HeftPolicy::default();
        let weights = ScoreWeights::default();
        let cm = CostModel::new(&w, &p, &weights);
        let sources = w.dag().sources();
        heft.plan_wave(&WaveView::new(&cm, &st, &sources, heft.signals()));
        for (u, v) in w.dag().edges() {
            assert!(heft.rank(u) > heft.rank(v), "{u} -> {v}");
        }
        for s in w.dag().sinks() {
            assert_eq!(heft.rank(&s), cm.mean_base_cost(&s));
        }
    }
}

#[test]
fn heft_prefers_the_resident_device() {
    let p = platform();
    let mut a = stage("A", 5.0);
    a.eligible_devices = ["d0".into(), "d1".into()].into_iter().collect();
    let w = workload(vec![a], &[]);
    let mut st = ExecutionState::new(&p.topology);
    st.project_device(&"d1".into(), 0.0, Some(QWEN.into()));
    let out = plan(&mut HeftPolicy::default(), &w, &p, &st, &["A"]);
    assert_eq!(devices_of(&out), vec![("A", "d1")]);
}

#[test]
fn halo_single_stage_takes_the_cheapest_idle_device() {
    let p = platform();
    let mut a = stage("A", 5.0);
    a.base_cost_override = Some([("d0", 6.0), ("d1", 4.0), ("d2", 3.0), ("d3", 3.5)].map(|(d, c)| (DeviceId::from(d), c)).into());
    let w = workload(vec![a], &[]);
    let mut st = ExecutionState::new(&p.topology);
    st.project_device(&"d2".into(), 50.0, None);
    for width in [1, 4] {
        let out = plan(&mut HaloPolicy::new(BeamConfig { beam_width: width, lookdepth: 2 }), &w, &p, &st, &["A"]);
        assert_eq!(devices_of(&out), vec![("A", "d3")]);
    }
}

/// Wraps Halo, checking that a wide beam never loses to the greedy one.
struct BeamProbe {
    inner: HaloPolicy,
    waves: usize,
}

impl Policy for BeamProbe {
    fn name(&self) -> &str {
        "halo-probe"
    }
    fn signals(&self) -> SignalAccess {
        self.inner.signals()
    }
    fn plan_wave(&mut self, view: &WaveView<'_>) -> Vec<Placement> {
        let (_, narrow) = self.inner.plan_with_width(view, 1);
        let (_, wide) = self.inner.plan_with_width(view, 8);
        assert!(wide.0 < narrow.0 || (wide.0 == narrow.0 && wide.1 <= narrow.1), "beam 8 {wide:?} worse than beam 1 {narrow:?}");
        self.waves += 1;
        self.inner.plan_wave(view)
    }
    fn solver_stats(&self) -> Option<&SolverStats> {
        None
    }
}

#[test]
fn wider_beam_never_worsens_the_wave_objective() {
    let p = default_platform();
    let roles = RoleCatalog::default();
    let mut probe = BeamProbe { inner: HaloPolicy::new(BeamConfig::default()), waves: 0 };
    let mut seed = 0;
    while probe.waves < 50 {
        let spec = SuiteSpec { depth: 4, width: 4, density: 0.5, seed, ..SuiteSpec::new(SuiteKind::Synthetic) };
        let dag = synth_generate(&spec, &p, &roles).unwrap();
        let qs = make_queries(dag.workflow_id(), &QueryPlan::new(8), seed);
        let w = Workload::single(&WorkflowInstance::new(dag, qs).unwrap());
        probe.inner = HaloPolicy::new(BeamConfig::default());
        run(&mut probe, &w, &p, &ScoreWeights::default(), seed, &ExecConfig::default()).unwrap();
        seed += 1;
    }
}

fn cached_world() -> (Platform, Workload) {
    let p = platform();
    let mut producer = stage("P", 5.0);
    producer.keep_cache = true;
    producer.shared_prefix_group = Some("g".into());
    producer.prompt_token_proxy = 512;
    let mut x = stage("X", 5.0);
    x.shared_prefix_group = Some("g".into());
    x.prompt_token_proxy = 512;
    x.cache_reuse = true;
    let y = stage("Y", 5.0);
    (p, workload(vec![producer, x, y], &[("P", "X")]))
}

#[test]
fn kvflow_follows_the_cached_prefix() {
    let (p, w) = cached_world();
    let mut st = ExecutionState::new(&p.topology);
    complete(&mut st, &w, "P", "d2", 0.0);
    let out = plan(&mut KvFlowPolicy, &w, &p, &st, &["X"]);
    assert_eq!(devices_of(&out), vec![("X", "d2")]);
}

#[test]
fn kvflow_cached_stage_wins_a_single_device() {
    let (p, mut w) = cached_world();
    let mut st = ExecutionState::new(&p.topology);
    complete(&mut st, &w, "P", "d0", 0.0);
    let mut stages: Vec<Stage> = w.dag().stages().cloned().collect();
    for s in &mut stages {
        s.eligible_devices = ["d0".into()].into_iter().collect();
    }
    w = workload(stages, &[("P", "X")]);
    let out = plan(&mut KvFlowPolicy, &w, &p, &st, &["X", "Y"]);
    assert_eq!(devices_of(&out), vec![("X", "d0")]);
}

#[test]
fn kvflow_without_cache_uses_residency_then_free_time() {
    let p = platform();
    let w = workload(vec![stage("A", 5.0)], &[]);
    let mut st = ExecutionState::new(&p.topology);
    st.project_device(&"d2".into(), 0.0, Some(QWEN.into()));
    let out = plan(&mut KvFlowPolicy, &w, &p, &st, &["A"]);
    assert_eq!(devices_of(&out), vec![("A", "d2")]);
    let mut st = ExecutionState::new(&p.topology);
    st.project_device(&"d0".into(), 9.0, None);
    st.project_device(&"d1".into(), 9.0, None);
    let out = plan(&mut KvFlowPolicy, &w, &p, &st, &["A"]);
    assert_eq!(devices_of(&out), vec![("A", "d2")]);
}

#[test]
fn helix_examples() {
    let p = platform();
    let mut parent = stage("A", 5.0);
    parent.output_token_proxy = 500;
    let w = workload(vec![parent, stage("B", 5.0)], &[("A", "B")]);

    // remote parent output: the colocated device avoids β·σ
    let mut st = ExecutionState::new(&p.topology);
    complete(&mut st, &w, "A", "d1", 0.0);
    st.project_device(&"d1".into(), 1.0, None);
    let out = plan(&mut HelixPolicy, &w, &p, &st, &["B"]);
    assert_eq!(devices_of(&out), vec![("B", "d1")]);

    // resident model beats a cold device
    let w = workload(vec![stage("C", 5.0)], &[]);
    let mut st = ExecutionState::new(&p.topology);
    st.project_device(&"d3".into(), 0.0, Some(QWEN.into()));
    assert_eq!(devices_of(&plan(&mut HelixPolicy, &w, &p, &st, &["C"])), vec![("C", "d3")]);

    // cold identical devices: lowest id
    let st = ExecutionState::new(&p.topology);
    assert_eq!(devices_of(&plan(&mut HelixPolicy, &w, &p, &st, &["C"])), vec![("C", "d0")]);
}

#[test]
fn undeclared_signals_are_refused() {
    let p = platform();
    let w = workload(vec![stage("A", 5.0)], &[]);
    let st = ExecutionState::new(&p.topology);
    let weights = ScoreWeights::default();
    let cm = CostModel::new(&w, &p, &weights);
    let f = vec![StageId::from("A")];
    let d = DeviceId::from("d0");
    let a = StageId::from("A");
    let refused = |access: SignalAccess, read: &dyn Fn(&WaveView<'_>)| {
        let view = WaveView::new(&cm, &st, &f, access);
        catch_unwind(AssertUnwindSafe(|| read(&view))).is_err()
    };
    let rr = RoundRobinPolicy::default().signals();
    assert!(refused(rr, &|v| { let _ = v.residency(&d); }));
    assert!(refused(rr, &|v| { let _ = v.base_cost(&a, &d); }));
    assert!(refused(rr, &|v| { let _ = v.prefix_overlap(&a, &d); }));
    assert!(refused(rr, &|v| { let _ = v.dag(); }));
    assert!(!refused(rr, &|v| { let _ = (v.frontier(), v.eligible(&a), v.devices()); }));

    let kv = KvFlowPolicy.signals();
    assert!(refused(kv, &|v| { let _ = v.transfer_time(&a, &d); }));
    assert!(refused(kv, &|v| { let _ = v.mean_edge_transfer(&a, &a); }));
    assert!(!refused(kv, &|v| { let _ = v.transfer_tiebreak(&a, &d); }));

    let halo = HaloPolicy::default().signals();
    assert!(refused(halo, &|v| { let _ = v.device_free(&d); }));
    assert!(refused(halo, &|v| { let _ = v.residency(&d); }));
    assert!(!refused(halo, &|v| { let _ = v.is_idle(&d); }));

    assert!(refused(HelixPolicy.signals(), &|v| { let _ = v.dag(); }));
    assert!(refused(HeftPolicy::default().signals(), &|v| { let _ = v.prefix_overlap(&a, &d); }));
    for name in POLICY_NAMES.iter().filter(|n| **n != "fate") {
        let pol = make_policy(name, BeamConfig::default()).unwrap();
        assert!(refused(pol.signals(), &|v| { let _ = v.cost_model(); }), "{name}");
    }
}

#[test]
fn every_policy_is_feasible_on_a_thousand_random_waves() {
    let p = default_platform();
    let roles = RoleCatalog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut waves: BTreeMap<&str, usize> = BTreeMap::new();
    let mut seed = 0;
    while POLICY_NAMES.iter().any(|n| waves.get(n).copied().unwrap_or(0) < 1000) {
        let spec = SuiteSpec {
            depth: rng.gen_range(1..=6),
            width: rng.gen_range(1..=6),
            density: rng.gen_range(0.1..=1.0),
            seed,
            ..SuiteSpec::new(SuiteKind::Synthetic)
        };
        let dag = synth_generate(&spec, &p, &roles).unwrap();
        let plan = QueryPlan { repeat_ratio: 0.5, prefix_length: 128, ..QueryPlan::new(rng.gen_range(1..=12)) };
        let w = Workload::single(&WorkflowInstance::new(dag, make_queries(&format!("k{seed}"), &plan, seed)).unwrap());
        let weights = ScoreWeights { horizon: rng.gen_range(0..=4), ..ScoreWeights::default() };
        for name in POLICY_NAMES {
            let mut pol = make_policy(name, BeamConfig::default()).unwrap();
            let a = run(pol.as_mut(), &w, &p, &weights, seed, &ExecConfig::default()).unwrap();
            let mut again = make_policy(name, BeamConfig::default()).unwrap();
            let b = run(again.as_mut(), &w, &p, &weights, seed, &ExecConfig::default()).unwrap();
            assert_eq!(a.tasks, b.tasks, "{name} is not deterministic");
            *waves.entry(name).or_default() += a.waves as usize;
        }
        seed += 1;
    }
}
