//! Execution state: residency, prefix store, parent-output locality and device
//! availability, plus completion bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::ExecError;
use crate::ids::{DeviceId, ModelAlias, PrefixGroup, QueryId, StageId, TaskId};
use crate::task::ScheduledTask;
use crate::workflow::{DeviceTopology, Stage};

const TIME_EPS: f64 = 1e-9;

/// One cached prefix on a device.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixEntry {
    pub group: PrefixGroup,
    pub tokens: u32,
    /// Model whose cached state this is.
    pub model: ModelAlias,
    pub keep: bool,
    /// Set once a kept entry has lived through a switch to another model.
    pub survived_switch: bool,
}

/// Device holding part of a completed stage's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShardLoc {
    pub device: DeviceId,
    pub queries: Vec<QueryId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Progress {
    shards: u32,
    started: u32,
    done: u32,
    locs: Vec<ShardLoc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum StateEvent {
    Commit { time: f64, stage: StageId, shards: u32 },
    Start { time: f64, task: TaskId, stage: StageId, device: DeviceId, model: ModelAlias, switched: bool, planned_finish: f64 },
    Evict { time: f64, device: DeviceId, group: PrefixGroup },
    Cache { time: f64, device: DeviceId, group: PrefixGroup, tokens: u32 },
    Complete { time: f64, task: TaskId, stage: StageId, device: DeviceId, stage_done: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionState {
    residency: BTreeMap<DeviceId, Option<ModelAlias>>,
    prefix: BTreeMap<DeviceId, Vec<PrefixEntry>>,
    parent_loc: BTreeMap<StageId, Vec<ShardLoc>>,
    device_free: BTreeMap<DeviceId, f64>,
    completed: BTreeSet<StageId>,
    running: BTreeMap<TaskId, ScheduledTask>,
    progress: BTreeMap<StageId, Progress>,
    clock: f64,
    record_events: bool,
    events: Vec<StateEvent>,
}

impl ExecutionState {
    pub fn new(topology: &DeviceTopology) -> Self {
        Self {
            residency: topology.ids().map(|d| (d.clone(), None)).collect(),
            prefix: topology.ids().map(|d| (d.clone(), Vec::new())).collect(),
            parent_loc: BTreeMap::new(),
            device_free: topology.ids().map(|d| (d.clone(), 0.0)).collect(),
            completed: BTreeSet::new(),
            running: BTreeMap::new(),
            progress: BTreeMap::new(),
            clock: 0.0,
            record_events: false,
            events: Vec::new(),
        }
    }

    pub fn with_event_log(mut self) -> Self {
        self.record_events = true;
        self
    }

    /// Deep copy for planning; the copy does not carry the event log.
    pub fn snapshot(&self) -> Self {
        let mut s = self.clone();
        s.record_events = false;
        s.events.clear();
        s
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn devices(&self) -> impl Iterator<Item = &DeviceId> {
        self.device_free.keys()
    }

    pub fn residency(&self, d: &DeviceId) -> Option<&ModelAlias> {
        self.residency.get(d).and_then(Option::as_ref)
    }

    pub fn prefix_entries(&self, d: &DeviceId) -> &[PrefixEntry] {
        self.prefix.get(d).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Cached tokens of `group` on `d` usable by `model`.
    pub fn cached_tokens(&self, d: &DeviceId, group: &PrefixGroup, model: &ModelAlias) -> Option<u32> {
        self.prefix_entries(d).iter().find(|e| &e.group == group && &e.model == model).map(|e| e.tokens)
    }

    pub fn parent_loc(&self, stage: &StageId) -> Option<&[ShardLoc]> {
        self.parent_loc.get(stage).map(Vec::as_slice)
    }

    pub fn device_free(&self, d: &DeviceId) -> f64 {
        self.device_free.get(d).copied().unwrap_or(0.0)
    }

    pub fn completed(&self) -> &BTreeSet<StageId> {
        &self.completed
    }

    pub fn running_tasks(&self) -> impl Iterator<Item = &ScheduledTask> {
        self.running.values()
    }

    pub fn running_task(&self, id: TaskId) -> Option<&ScheduledTask> {
        self.running.get(&id)
    }

    /// Stages with at least one shard issued and not yet complete.
    pub fn running_stages(&self) -> BTreeSet<StageId> {
        self.progress.iter().filter(|(_, p)| p.started > 0).map(|(s, _)| s.clone()).collect()
    }

    /// Planned stages with no shard issued yet.
    pub fn committed(&self) -> BTreeSet<StageId> {
        self.progress.iter().filter(|(_, p)| p.started == 0).map(|(s, _)| s.clone()).collect()
    }

    pub fn events(&self) -> &[StateEvent] {
        &self.events
    }

    pub fn events_jsonl(&self) -> String {
        self.events.iter().map(|e| serde_json::to_string(e).expect("event json") + "\n").collect()
    }

    fn log(&mut self, e: StateEvent) {
        if self.record_events {
            self.events.push(e);
        }
    }

    pub fn advance_to(&mut self, t: f64) {
        if t > self.clock {
            self.clock = t;
        }
    }

    /// Overrides residency and availability; used to build projected planning views.
    pub fn project_device(&mut self, d: &DeviceId, free: f64, model: Option<ModelAlias>) {
        self.device_free.insert(d.clone(), free);
        if model.is_some() {
            self.residency.insert(d.clone(), model);
        }
    }

    pub fn commit(&mut self, stage: &StageId, shards: u32) -> Result<(), ExecError> {
        if self.completed.contains(stage) || self.progress.contains_key(stage) {
            return Err(ExecError::InvalidAssignment {
                policy: String::new(),
                detail: format!("stage {stage} committed twice"),
            });
        }
        self.progress.insert(stage.clone(), Progress { shards, started: 0, done: 0, locs: Vec::new() });
        let time = self.clock;
        self.log(StateEvent::Commit { time, stage: stage.clone(), shards });
        Ok(())
    }

    /// Starts `task` at the current clock with the given planned finish. Returns
    /// whether the device had to switch models.
    pub fn on_task_start(&mut self, task: &ScheduledTask, stage: &Stage, planned_finish: f64) -> Result<bool, ExecError> {
        let d = &task.device;
        let busy = self.running.values().any(|t| &t.device == d);
        if busy || self.device_free(d) > self.clock + TIME_EPS {
            return Err(ExecError::InvalidAssignment {
                policy: String::new(),
                detail: format!("device {d} busy at t={:.6} when starting {}", self.clock, task.id),
            });
        }
        let Some(p) = self.progress.get_mut(&task.stage) else {
            return Err(ExecError::InvalidAssignment {
                policy: String::new(),
                detail: format!("stage {} started without commit", task.stage),
            });
        };
        p.started += 1;
        let switched = self.residency(d) != Some(&stage.model);
        if switched {
            self.switch_model(d, &stage.model);
        }
        self.residency.insert(d.clone(), Some(stage.model.clone()));
        self.device_free.insert(d.clone(), planned_finish);
        let mut t = task.clone();
        t.issue = Some(self.clock);
        self.running.insert(task.id, t);
        let time = self.clock;
        self.log(StateEvent::Start {
            time,
            task: task.id,
            stage: task.stage.clone(),
            device: d.clone(),
            model: stage.model.clone(),
            switched,
            planned_finish,
        });
        Ok(switched)
    }

    fn switch_model(&mut self, d: &DeviceId, model: &ModelAlias) {
        let entries = self.prefix.entry(d.clone()).or_default();
        let mut evicted = Vec::new();
        entries.retain_mut(|e| {
            if &e.model == model {
                e.survived_switch = false;
                true
            } else if e.keep && !e.survived_switch {
                e.survived_switch = true;
                true
            } else {
                evicted.push(e.group.clone());
                false
            }
        });
        let time = self.clock;
        for group in evicted {
            self.log(StateEvent::Evict { time, device: d.clone(), group });
        }
    }

    fn upsert_prefix(&mut self, d: &DeviceId, entry: PrefixEntry) {
        let time = self.clock;
        let (group, tokens) = (entry.group.clone(), entry.tokens);
        let entries = self.prefix.entry(d.clone()).or_default();
        match entries.iter_mut().find(|e| e.group == entry.group) {
            Some(e) => {
                e.keep |= entry.keep;
                e.tokens = e.tokens.max(entry.tokens);
                e.model = entry.model;
                e.survived_switch = false;
            }
            None => {
                entries.push(entry);
                entries.sort_by(|a, b| a.group.cmp(&b.group));
            }
        }
        self.log(StateEvent::Cache { time, device: d.clone(), group, tokens });
    }

    /// Completes a running task at `finish`. `shard_groups` are the query prefix
    /// groups (with their prefix length) of the task's shard. Returns whether the
    /// stage is now complete.
    pub fn on_task_complete(
        &mut self,
        task: TaskId,
        finish: f64,
        stage: &Stage,
        shard_groups: &[(PrefixGroup, u32)],
    ) -> Result<bool, ExecError> {
        let Some(mut t) = self.running.remove(&task) else {
            return Err(ExecError::InvalidAssignment { policy: String::new(), detail: format!("unknown task {task}") });
        };
        if finish + TIME_EPS < self.clock {
            return Err(ExecError::InvalidAssignment {
                policy: String::new(),
                detail: format!("task {task} finishes at {finish} before clock {}", self.clock),
            });
        }
        self.advance_to(finish);
        t.finish = Some(finish);
        let d = t.device.clone();
        if stage.keep_cache {
            if let Some(g) = &stage.shared_prefix_group {
                self.upsert_prefix(
                    &d,
                    PrefixEntry {
                        group: g.clone(),
                        tokens: stage.prompt_token_proxy,
                        model: stage.model.clone(),
                        keep: true,
                        survived_switch: false,
                    },
                );
            }
        }
        if stage.cache_reuse {
            for (g, tokens) in shard_groups {
                if *tokens > 0 {
                    self.upsert_prefix(
                        &d,
                        PrefixEntry {
                            group: g.clone(),
                            tokens: *tokens,
                            model: stage.model.clone(),
                            keep: stage.keep_cache,
                            survived_switch: false,
                        },
                    );
                }
            }
        }
        let p = self.progress.get_mut(&t.stage).expect("running task has progress");
        p.done += 1;
        p.locs.push(ShardLoc { device: d.clone(), queries: t.queries.clone() });
        let stage_done = p.done == p.shards;
        if stage_done {
            let mut p = self.progress.remove(&t.stage).unwrap();
            p.locs.sort_by(|a, b| a.queries.first().cmp(&b.queries.first()));
            self.parent_loc.insert(t.stage.clone(), p.locs);
            self.completed.insert(t.stage.clone());
        }
        let time = self.clock;
        self.log(StateEvent::Complete { time, task, stage: t.stage, device: d, stage_done });
        Ok(stage_done)
    }
}
