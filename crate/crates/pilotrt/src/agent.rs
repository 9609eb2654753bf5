//! Pilot agent: owns the task registry and the executor instances. Admitted
//! tasks are routed to an instance queue, then pushed out through one
//! serialized dispatch pipe. The registry's event log records every move.
//!
//! Drive discipline: handle a clock batch first, then `pump` to drain
//! instance events, and only then admit or cancel work at the current time.
//! That keeps the shared log globally ordered.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::backend::{Backend, BackendActionKind, BackendEventKind, BackendFamily, SubmitError, TimerHost};
use crate::sim::SimClock;
use crate::task::{InstanceState, Modality, Registry, TaskDescription, TaskState, ValidationError};

/// Everything the engine clock can fire.
#[derive(Debug, Clone, PartialEq)]
pub enum EngineAction {
    /// Timer owned by one backend instance.
    Instance { idx: usize, kind: BackendActionKind },
    /// Next slot of the agent's dispatch pipe.
    AgentDispatch,
    /// Scripted instance failure.
    Fault { idx: usize, cause: String },
}

/// TimerHost shim tagging backend timers with their instance index.
pub struct InstanceTimers<'a> {
    pub idx: usize,
    pub clock: &'a mut SimClock<EngineAction>,
}

impl TimerHost for InstanceTimers<'_> {
    fn schedule(&mut self, fire_at: f64, kind: BackendActionKind) {
        self.clock
            .schedule_at(fire_at, EngineAction::Instance { idx: self.idx, kind })
            .expect("backend timers target the future");
    }
}

/// How the router picks among instances that could all take a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    RoundRobin,
    /// Fewest queued-plus-outstanding tasks wins; ties go to the lowest index.
    LeastLoaded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    /// Seconds per dispatch pipe slot; bounds agent-side submission rate.
    pub dispatch_latency_s: f64,
    /// Per-instance outstanding cap as a multiple of its core count.
    pub depth_factor: u32,
    /// Re-routes allowed after an instance failure strands a queued task.
    pub max_retries: u32,
    pub selection: SelectionPolicy,
    /// Families tried for executable tasks, in preference order.
    pub route_exec: Vec<BackendFamily>,
    /// Families tried for function tasks, in preference order.
    pub route_func: Vec<BackendFamily>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            dispatch_latency_s: 0.005,
            depth_factor: 2,
            max_retries: 1,
            selection: SelectionPolicy::LeastLoaded,
            route_exec: vec![BackendFamily::Hierarchical, BackendFamily::Capped],
            route_func: vec![BackendFamily::Workerpool],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AgentCancelError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` already terminal")]
    AlreadyTerminal(String),
}

/// Counters from one pump pass.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct PumpStats {
    /// Backend events consumed.
    pub consumed: usize,
    /// Events that could not be applied to the registry.
    pub errors: usize,
}

struct InstanceSlot {
    backend: Box<dyn Backend>,
    queue: VecDeque<String>,
    outstanding: usize,
}

impl InstanceSlot {
    fn load(&self) -> usize {
        self.queue.len() + self.outstanding
    }
}

pub struct Agent {
    cfg: AgentConfig,
    registry: Registry,
    instances: Vec<InstanceSlot>,
    /// uid -> (instance index, submission id) once submitted.
    assigned: BTreeMap<String, (usize, String)>,
    dispatcher_armed: bool,
    /// Opens when no instance is still booting; dispatch waits for it so all
    /// instances see work from the same starting line.
    barrier_open: bool,
    rr_dispatch: usize,
    rr_route: usize,
}

impl Agent {
    pub fn new(cfg: AgentConfig, backends: Vec<Box<dyn Backend>>) -> Self {
        let instances = backends
            .into_iter()
            .map(|backend| InstanceSlot { backend, queue: VecDeque::new(), outstanding: 0 })
            .collect();
        Agent {
            cfg,
            registry: Registry::new(),
            instances,
            assigned: BTreeMap::new(),
            dispatcher_armed: false,
            barrier_open: false,
            rr_dispatch: 0,
            rr_route: 0,
        }
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn into_registry(self) -> Registry {
        self.registry
    }

    pub fn instance_count(&self) -> usize {
        self.instances.len()
    }

    pub fn instance(&self, idx: usize) -> &dyn Backend {
        self.instances[idx].backend.as_ref()
    }

    pub fn barrier_open(&self) -> bool {
        self.barrier_open
    }

    /// Queued across all instances (admitted but not yet submitted).
    pub fn queued(&self) -> usize {
        self.instances.iter().map(|s| s.queue.len()).sum()
    }

    /// Submitted to a backend and not yet terminal.
    pub fn outstanding(&self) -> usize {
        self.instances.iter().map(|s| s.outstanding).sum()
    }

    /// Boot every instance. Call once before driving the clock.
    pub fn start(&mut self, now: f64, clock: &mut SimClock<EngineAction>) {
        for idx in 0..self.instances.len() {
            let (id, part_id) = {
                let b = self.instances[idx].backend.as_ref();
                (b.id().to_string(), b.partition().id)
            };
            self.registry.record_instance(now, &id, InstanceState::Booting, Some(part_id), None);
            let mut timers = InstanceTimers { idx, clock };
            self.instances[idx].backend.begin_bootstrap(now, &mut timers);
        }
    }

    /// Could this instance ever run the task, judging by shape alone?
    fn instance_fits(slot: &InstanceSlot, desc: &TaskDescription) -> bool {
        let d = slot.backend.descriptor();
        if !d.supports_modality(desc.modality) {
            return false;
        }
        let part = slot.backend.partition();
        let spec = &part.spec;
        if !d.supports_multinode {
            return desc.node_span.is_none_or(|s| s <= 1)
                && desc.cores <= spec.usable_cores()
                && desc.gpus <= spec.gpus_per_node;
        }
        if let Some(span) = desc.node_span {
            if span == 0
                || span > part.node_count()
                || desc.cores.div_ceil(span) > spec.usable_cores()
                || desc.gpus.div_ceil(span) > spec.gpus_per_node
            {
                return false;
            }
        }
        desc.cores <= part.total_cores() && desc.gpus <= part.total_gpus()
    }

    fn routable(&self, desc: &TaskDescription, exclude: Option<usize>) -> Vec<usize> {
        let families = match desc.modality {
            Modality::Executable => &self.cfg.route_exec,
            Modality::Function => &self.cfg.route_func,
        };
        self.instances
            .iter()
            .enumerate()
            .filter(|(idx, slot)| {
                Some(*idx) != exclude
                    && families.contains(&slot.backend.descriptor().family)
                    && !matches!(
                        slot.backend.lifecycle(),
                        InstanceState::InstanceFailed | InstanceState::Stopped
                    )
                    && Self::instance_fits(slot, desc)
            })
            .map(|(idx, _)| idx)
            .collect()
    }

    /// Pick an instance for the task, or None when nothing can take it.
    fn route(&mut self, desc: &TaskDescription, exclude: Option<usize>) -> Option<usize> {
        let eligible = self.routable(desc, exclude);
        if eligible.is_empty() {
            return None;
        }
        match self.cfg.selection {
            SelectionPolicy::RoundRobin => {
                let n = self.instances.len();
                let pick = (0..n)
                    .map(|k| (self.rr_route + k) % n)
                    .find(|idx| eligible.contains(idx))
                    .expect("eligible set non-empty");
                self.rr_route = (pick + 1) % n;
                Some(pick)
            }
            SelectionPolicy::LeastLoaded => {
                eligible.into_iter().min_by_key(|&idx| self.instances[idx].load())
            }
        }
    }

    /// Admit a task and queue it on an instance. Tasks nothing can host fail
    /// right here, with the reason in the log.
    pub fn enqueue(
        &mut self,
        desc: TaskDescription,
        now: f64,
        clock: &mut SimClock<EngineAction>,
    ) -> Result<(), ValidationError> {
        let uid = desc.uid.clone();
        self.registry.admit(desc.clone(), now)?;
        match self.route(&desc, None) {
            Some(idx) => {
                let id = self.instances[idx].backend.id().to_string();
                self.registry
                    .transition(&uid, TaskState::Scheduled, now, None, Some(id), None)
                    .expect("NEW task accepts SCHEDULED");
                self.instances[idx].queue.push_back(uid);
                self.kick(now, clock);
            }
            None => {
                self.registry
                    .transition(
                        &uid,
                        TaskState::Failed,
                        now,
                        None,
                        None,
                        Some("no instance fits task shape".to_string()),
                    )
                    .expect("NEW task accepts FAILED");
            }
        }
        Ok(())
    }

    /// Arm the dispatch pipe if there is reachable work and it is idle.
    fn kick(&mut self, now: f64, clock: &mut SimClock<EngineAction>) {
        if !self.barrier_open || self.dispatcher_armed || self.next_dispatchable().is_none() {
            return;
        }
        clock
            .schedule_at(now + self.cfg.dispatch_latency_s, EngineAction::AgentDispatch)
            .expect("dispatch slot in the future");
        self.dispatcher_armed = true;
    }

    /// First instance (round-robin from the cursor) whose queue head can be
    /// submitted right now.
    fn next_dispatchable(&self) -> Option<usize> {
        let n = self.instances.len();
        (0..n).map(|k| (self.rr_dispatch + k) % n).find(|&idx| {
            let slot = &self.instances[idx];
            !slot.queue.is_empty()
                && slot.backend.lifecycle() == InstanceState::Ready
                && (slot.outstanding as u64)
                    < self.cfg.depth_factor as u64 * slot.backend.partition().total_cores() as u64
        })
    }

    fn dispatch_one(&mut self, now: f64, clock: &mut SimClock<EngineAction>) {
        let Some(idx) = self.next_dispatchable() else { return };
        let uid = self.instances[idx].queue.pop_front().expect("dispatchable queue non-empty");
        self.rr_dispatch = (idx + 1) % self.instances.len();
        let desc = self.registry.task(&uid).expect("queued task admitted").desc.clone();
        let result = {
            let mut timers = InstanceTimers { idx, clock };
            self.instances[idx].backend.submit(&desc, now, &mut timers)
        };
        match result {
            Ok(sid) => {
                let slot = &mut self.instances[idx];
                slot.outstanding += 1;
                let id = slot.backend.id().to_string();
                let part_id = slot.backend.partition().id;
                self.assigned.insert(uid.clone(), (idx, sid.clone()));
                self.registry
                    .transition(&uid, TaskState::Submitted, now, Some(part_id), Some(id), Some(format!("sid={sid}")))
                    .expect("SCHEDULED task accepts SUBMITTED");
            }
            Err(SubmitError::NotReady) | Err(SubmitError::InstanceDown) => {
                self.requeue_or_fail(uid, idx, now, "instance unavailable at dispatch");
            }
            Err(e) => {
                self.registry
                    .transition(&uid, TaskState::Failed, now, None, None, Some(e.to_string()))
                    .expect("SCHEDULED task accepts FAILED");
            }
        }
    }

    /// Re-route a stranded SCHEDULED task, or fail it once retries run out.
    /// No SUBMITTED event was written, so the one-submission invariant holds.
    fn requeue_or_fail(&mut self, uid: String, failed_idx: usize, now: f64, cause: &str) {
        let task = self.registry.task_mut(&uid).expect("known task");
        let desc = task.desc.clone();
        if task.reroutes < self.cfg.max_retries {
            task.reroutes += 1;
            if let Some(j) = self.route(&desc, Some(failed_idx)) {
                self.instances[j].queue.push_back(uid);
                return;
            }
        }
        self.registry
            .transition(&uid, TaskState::Failed, now, None, None, Some(cause.to_string()))
            .expect("SCHEDULED task accepts FAILED");
    }

    /// Real-mode poll hook: lets every instance drain OS-side progress.
    pub fn tick(&mut self, now: f64, clock: &mut SimClock<EngineAction>) {
        for idx in 0..self.instances.len() {
            let mut timers = InstanceTimers { idx, clock };
            self.instances[idx].backend.on_tick(now, &mut timers);
        }
    }

    /// Handle one clock action.
    pub fn handle(&mut self, action: EngineAction, now: f64, clock: &mut SimClock<EngineAction>) {
        match action {
            EngineAction::Instance { idx, kind } => {
                let mut timers = InstanceTimers { idx, clock };
                self.instances[idx].backend.handle_action(kind, now, &mut timers);
            }
            EngineAction::AgentDispatch => {
                self.dispatcher_armed = false;
                if !self.barrier_open {
                    return;
                }
                self.dispatch_one(now, clock);
                self.kick(now, clock);
            }
            EngineAction::Fault { idx, cause } => {
                self.instances[idx].backend.inject_failure(now, &cause);
            }
        }
    }

    /// Drain instance events into the registry. Returns what it consumed.
    pub fn pump(&mut self, now: f64, clock: &mut SimClock<EngineAction>) -> PumpStats {
        let mut stats = PumpStats::default();
        // Merge the per-instance streams so the shared log stays ordered.
        let mut merged: Vec<(usize, crate::backend::BackendEvent)> = Vec::new();
        for (idx, slot) in self.instances.iter_mut().enumerate() {
            for ev in slot.backend.poll_events(now) {
                merged.push((idx, ev));
            }
        }
        merged.sort_by(|a, b| a.1.ts.total_cmp(&b.1.ts));
        for (idx, ev) in merged {
            stats.consumed += 1;
            let id = self.instances[idx].backend.id().to_string();
            let part_id = self.instances[idx].backend.partition().id;
            let apply = |agent: &mut Agent, to: TaskState| {
                let uid = ev.uid.as_deref().expect("task event carries uid");
                let res = agent.registry.transition(
                    uid,
                    to,
                    ev.ts,
                    Some(part_id),
                    Some(id.clone()),
                    ev.detail.clone(),
                );
                if res.is_err() {
                    1
                } else {
                    0
                }
            };
            match ev.kind {
                BackendEventKind::Ready => {
                    self.registry.record_instance(ev.ts, &id, InstanceState::Ready, Some(part_id), ev.detail);
                    self.open_barrier_if_settled();
                }
                BackendEventKind::InstanceFailed => {
                    self.registry.record_instance(
                        ev.ts,
                        &id,
                        InstanceState::InstanceFailed,
                        Some(part_id),
                        ev.detail,
                    );
                    self.strand_queue(idx, ev.ts);
                    self.open_barrier_if_settled();
                }
                BackendEventKind::TaskRunning => stats.errors += apply(self, TaskState::Running),
                BackendEventKind::TaskDone => {
                    stats.errors += apply(self, TaskState::Done);
                    self.instances[idx].outstanding -= 1;
                }
                BackendEventKind::TaskFailed => {
                    stats.errors += apply(self, TaskState::Failed);
                    self.instances[idx].outstanding -= 1;
                }
                BackendEventKind::TaskCanceled => {
                    stats.errors += apply(self, TaskState::Canceled);
                    self.instances[idx].outstanding -= 1;
                }
                BackendEventKind::CapacityFreed => {}
            }
        }
        if stats.consumed > 0 {
            self.kick(now, clock);
        }
        stats
    }

    fn open_barrier_if_settled(&mut self) {
        self.barrier_open = self
            .instances
            .iter()
            .all(|s| s.backend.lifecycle() != InstanceState::Booting);
    }

    /// Move every task queued on a dead instance elsewhere, or fail it.
    fn strand_queue(&mut self, idx: usize, now: f64) {
        let stranded: Vec<String> = self.instances[idx].queue.drain(..).collect();
        for uid in stranded {
            self.requeue_or_fail(uid, idx, now, "instance failed before dispatch");
        }
    }

    /// Cancel wherever the task currently lives.
    pub fn cancel(
        &mut self,
        uid: &str,
        now: f64,
        clock: &mut SimClock<EngineAction>,
    ) -> Result<(), AgentCancelError> {
        let state = self
            .registry
            .task(uid)
            .ok_or_else(|| AgentCancelError::UnknownTask(uid.to_string()))?
            .state;
        if state.is_terminal() {
            return Err(AgentCancelError::AlreadyTerminal(uid.to_string()));
        }
        if let Some((idx, sid)) = self.assigned.get(uid).cloned() {
            if !self.registry.task(uid).expect("known").state.is_terminal() {
                let mut timers = InstanceTimers { idx, clock };
                // Terminal event arrives through the normal pump path.
                let _ = self.instances[idx].backend.cancel(&sid, now, &mut timers);
                return Ok(());
            }
        }
        for slot in &mut self.instances {
            if let Some(pos) = slot.queue.iter().position(|u| u == uid) {
                slot.queue.remove(pos);
                break;
            }
        }
        self.registry
            .transition(uid, TaskState::Canceled, now, None, None, Some("canceled before dispatch".into()))
            .map_err(|_| AgentCancelError::AlreadyTerminal(uid.to_string()))?;
        Ok(())
    }

    /// Stop ready instances; queued work stays queued (callers decide fate).
    pub fn shutdown(&mut self, now: f64) {
        for idx in 0..self.instances.len() {
            let id = self.instances[idx].backend.id().to_string();
            let part_id = self.instances[idx].backend.partition().id;
            let was_ready = self.instances[idx].backend.lifecycle() == InstanceState::Ready;
            self.instances[idx].backend.shutdown(now);
            if was_ready && self.instances[idx].backend.lifecycle() == InstanceState::Stopped {
                let detail = self.instances[idx].backend.stop_detail();
                self.registry.record_instance(now, &id, InstanceState::Stopped, Some(part_id), detail);
            }
        }
    }

    /// Cross-checks every instance and the agent's own accounting.
    pub fn audit(&self) -> Result<(), String> {
        for slot in &self.instances {
            slot.backend.audit()?;
        }
        let mut by_instance = vec![0usize; self.instances.len()];
        for (uid, (idx, _)) in &self.assigned {
            let state = self.registry.task(uid).expect("assigned task known").state;
            if matches!(state, TaskState::Submitted | TaskState::Running) {
                by_instance[*idx] += 1;
            }
        }
        for (idx, slot) in self.instances.iter().enumerate() {
            if by_instance[idx] != slot.outstanding {
                return Err(format!(
                    "instance {idx}: outstanding counter {} != live submitted tasks {}",
                    slot.outstanding, by_instance[idx]
                ));
            }
        }
        Ok(())
    }
}
