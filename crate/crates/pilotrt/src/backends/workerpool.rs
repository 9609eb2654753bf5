//! Worker pool: persistent workers pinned to nodes take tasks from a
//! centralized dispatcher. Functions run inside the worker with no per-task
//! process; executables pay an extra spawn delay. The dispatcher pushes one
//! task per channel slot, which bounds pool-wide start throughput.

use std::collections::{BTreeMap, VecDeque};

use crate::backend::{
    Backend, BackendActionKind, BackendDescriptor, BackendEvent, BackendEventKind, BackendFamily,
    BackendParams, CancelError, InstanceCommon, SubmitError, TimerHost,
};
use crate::resources::{Partition, ResourceRequest, SlotAssignment, SlotMap};
use crate::task::{InstanceState, Modality, TaskDescription};

/// Tuning knobs specific to the worker pool family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerpoolConfig {
    /// Workers started per node; default is one per usable core.
    pub workers_per_node: Option<u32>,
    /// Seconds the dispatcher channel spends per task handoff.
    pub channel_latency_s: f64,
    /// Extra start delay for executable tasks (process spawn in the worker).
    pub spawn_latency_s: f64,
    /// Completion offset for zero-duration bodies.
    pub zero_eps_s: f64,
}

impl Default for WorkerpoolConfig {
    fn default() -> Self {
        WorkerpoolConfig {
            workers_per_node: None,
            channel_latency_s: 0.002,
            spawn_latency_s: 0.03,
            zero_eps_s: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Queued,
    /// Worker and slots held; RUNNING event pending in the dispatch channel.
    Launching,
    Running,
    Terminal,
}

struct PoolTask {
    req: ResourceRequest,
    modality: Modality,
    body_s: f64,
    phase: Phase,
    assignment: Option<SlotAssignment>,
    worker: Option<usize>,
}

struct Worker {
    wid: String,
    node_id: u32,
    busy_with: Option<String>,
}

pub struct WorkerpoolBackend {
    common: InstanceCommon,
    cfg: WorkerpoolConfig,
    slots: SlotMap,
    workers: Vec<Worker>,
    /// Next worker index the round-robin scan starts from.
    rr_cursor: usize,
    queue: VecDeque<String>,
    tasks: BTreeMap<String, PoolTask>,
    sid_to_uid: BTreeMap<String, String>,
}

impl WorkerpoolBackend {
    pub fn new(id: String, partition: Partition, params: BackendParams, cfg: WorkerpoolConfig) -> Self {
        let per_node = cfg.workers_per_node.unwrap_or_else(|| partition.spec.usable_cores()).max(1);
        let mut workers = Vec::new();
        for &node_id in &partition.node_ids {
            for _ in 0..per_node {
                workers.push(Worker {
                    wid: format!("w{}", workers.len()),
                    node_id,
                    busy_with: None,
                });
            }
        }
        let slots = SlotMap::for_partition(&partition);
        WorkerpoolBackend {
            common: InstanceCommon::new(id, partition, params),
            cfg,
            slots,
            workers,
            rr_cursor: 0,
            queue: VecDeque::new(),
            tasks: BTreeMap::new(),
            sid_to_uid: BTreeMap::new(),
        }
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    /// Round-robin scan for an idle worker whose node can host the request.
    fn pick_worker(&self, req: &ResourceRequest) -> Option<usize> {
        let n = self.workers.len();
        (0..n).map(|k| (self.rr_cursor + k) % n).find(|&idx| {
            let w = &self.workers[idx];
            w.busy_with.is_none() && self.slots.can_place_on(w.node_id, req)
        })
    }

    /// Dispatch queue heads while idle workers fit them. FIFO: a blocked
    /// head blocks everything behind it.
    fn try_dispatch(&mut self, now: f64, timers: &mut dyn TimerHost) {
        while let Some(uid) = self.queue.front().cloned() {
            let (req, modality) = {
                let t = &self.tasks[&uid];
                (t.req, t.modality)
            };
            let Some(idx) = self.pick_worker(&req) else { break };
            self.queue.pop_front();
            let node_id = self.workers[idx].node_id;
            let assignment = self.slots.acquire_on(&uid, node_id, &req).expect("picked fitting node");
            self.workers[idx].busy_with = Some(uid.clone());
            self.rr_cursor = (idx + 1) % self.workers.len();
            let slot = self.common.pipeline_slot(now, self.cfg.channel_latency_s);
            let start = match modality {
                Modality::Executable => slot + self.cfg.spawn_latency_s,
                Modality::Function => slot,
            };
            let task = self.tasks.get_mut(&uid).expect("queued task is known");
            task.phase = Phase::Launching;
            task.assignment = Some(assignment);
            task.worker = Some(idx);
            timers.schedule(start, BackendActionKind::LaunchFire { uid });
        }
    }

    fn release(&mut self, uid: &str) {
        let task = self.tasks.get_mut(uid).expect("known task");
        if task.assignment.take().is_some() {
            self.slots.release(uid).expect("held assignment");
        }
        if let Some(idx) = task.worker.take() {
            self.workers[idx].busy_with = None;
        }
        task.phase = Phase::Terminal;
    }

    fn push_capacity_freed(&mut self, now: f64) {
        self.common.push_event(BackendEvent {
            ts: now,
            kind: BackendEventKind::CapacityFreed,
            uid: None,
            detail: None,
        });
    }
}

impl Backend for WorkerpoolBackend {
    fn id(&self) -> &str {
        &self.common.id
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::for_family(BackendFamily::Workerpool)
    }

    fn lifecycle(&self) -> InstanceState {
        self.common.lifecycle
    }

    fn partition(&self) -> &Partition {
        &self.common.partition
    }

    fn free_cores(&self) -> u32 {
        self.slots.free_cores()
    }

    fn in_flight(&self) -> usize {
        self.tasks.values().filter(|t| t.phase != Phase::Terminal).count()
    }

    fn begin_bootstrap(&mut self, now: f64, timers: &mut dyn TimerHost) {
        self.common.begin_bootstrap(now, timers);
    }

    fn submit(
        &mut self,
        desc: &TaskDescription,
        now: f64,
        timers: &mut dyn TimerHost,
    ) -> Result<String, SubmitError> {
        self.common.ensure_ready()?;
        if self.tasks.contains_key(&desc.uid) {
            return Err(SubmitError::DuplicateSubmission);
        }
        // One worker hosts the whole task, so multi-node shapes and
        // over-node-size requests can never run here.
        if desc.node_span.is_some_and(|s| s > 1) {
            return Err(SubmitError::Rejected);
        }
        let spec = &self.common.partition.spec;
        if desc.cores > spec.usable_cores() || desc.gpus > spec.gpus_per_node {
            return Err(SubmitError::Rejected);
        }
        let req = ResourceRequest { cores: desc.cores, gpus: desc.gpus, node_span: None };
        let sid = self.common.next_submission_id();
        self.sid_to_uid.insert(sid.clone(), desc.uid.clone());
        self.tasks.insert(
            desc.uid.clone(),
            PoolTask {
                req,
                modality: desc.modality,
                body_s: desc.duration_hint(),
                phase: Phase::Queued,
                assignment: None,
                worker: None,
            },
        );
        self.queue.push_back(desc.uid.clone());
        self.try_dispatch(now, timers);
        Ok(sid)
    }

    fn cancel(
        &mut self,
        submission_id: &str,
        now: f64,
        timers: &mut dyn TimerHost,
    ) -> Result<(), CancelError> {
        let uid = self
            .sid_to_uid
            .get(submission_id)
            .cloned()
            .ok_or_else(|| CancelError::UnknownSubmission(submission_id.to_string()))?;
        let phase = self.tasks[&uid].phase;
        match phase {
            Phase::Terminal => return Err(CancelError::AlreadyTerminal(submission_id.to_string())),
            Phase::Queued => {
                self.queue.retain(|u| u != &uid);
                self.tasks.get_mut(&uid).expect("known").phase = Phase::Terminal;
                self.common.push_task_event(now, BackendEventKind::TaskCanceled, &uid, None);
            }
            Phase::Launching | Phase::Running => {
                self.release(&uid);
                self.common.push_task_event(now, BackendEventKind::TaskCanceled, &uid, None);
                self.push_capacity_freed(now);
                self.try_dispatch(now, timers);
            }
        }
        Ok(())
    }

    fn handle_action(&mut self, kind: BackendActionKind, now: f64, timers: &mut dyn TimerHost) {
        match kind {
            BackendActionKind::BootstrapDone => {
                self.common.finish_bootstrap(now);
            }
            BackendActionKind::BootstrapTimeout => {
                self.common.bootstrap_timed_out(now);
            }
            BackendActionKind::LaunchFire { uid } => {
                let Some(task) = self.tasks.get_mut(&uid) else { return };
                if task.phase != Phase::Launching {
                    return;
                }
                task.phase = Phase::Running;
                let body = task.body_s;
                let wid = task.worker.map(|i| self.workers[i].wid.clone()).unwrap_or_default();
                self.common.push_task_event(
                    now,
                    BackendEventKind::TaskRunning,
                    &uid,
                    Some(format!("worker={wid}")),
                );
                let end = now + if body > 0.0 { body } else { self.cfg.zero_eps_s };
                timers.schedule(end, BackendActionKind::Complete { uid });
            }
            BackendActionKind::Complete { uid } => {
                let Some(task) = self.tasks.get(&uid) else { return };
                if task.phase != Phase::Running {
                    return;
                }
                self.release(&uid);
                self.common.push_task_event(now, BackendEventKind::TaskDone, &uid, None);
                self.push_capacity_freed(now);
                self.try_dispatch(now, timers);
            }
        }
    }

    fn poll_events(&mut self, up_to: f64) -> Vec<BackendEvent> {
        self.common.poll_events(up_to)
    }

    fn inject_failure(&mut self, now: f64, cause: &str) {
        let uids: Vec<String> = self
            .tasks
            .iter()
            .filter(|(_, t)| t.phase != Phase::Terminal)
            .map(|(u, _)| u.clone())
            .collect();
        for uid in uids {
            self.release(&uid);
            self.common
                .push_task_event(now, BackendEventKind::TaskFailed, &uid, Some(cause.to_string()));
        }
        self.queue.clear();
        self.common.lifecycle = InstanceState::InstanceFailed;
        self.common.push_event(BackendEvent {
            ts: now,
            kind: BackendEventKind::InstanceFailed,
            uid: None,
            detail: Some(cause.to_string()),
        });
    }

    fn shutdown(&mut self, _now: f64) {
        if self.common.lifecycle == InstanceState::Ready {
            self.common.lifecycle = InstanceState::Stopped;
        }
    }

    fn audit(&self) -> Result<(), String> {
        self.slots.check_conservation()?;
        let busy = self.workers.iter().filter(|w| w.busy_with.is_some()).count();
        let active = self
            .tasks
            .values()
            .filter(|t| matches!(t.phase, Phase::Launching | Phase::Running))
            .count();
        if busy != active {
            return Err(format!(
                "{}: {busy} busy workers but {active} active tasks",
                self.common.id
            ));
        }
        for w in &self.workers {
            if let Some(uid) = &w.busy_with {
                let task = self.tasks.get(uid).ok_or_else(|| {
                    format!("{}: worker {} busy with unknown task {uid}", self.common.id, w.wid)
                })?;
                let on_node = task
                    .assignment
                    .as_ref()
                    .is_some_and(|a| a.nodes.iter().any(|&(n, _, _)| n == w.node_id));
                if !on_node {
                    return Err(format!(
                        "{}: worker {} on node {} but task {uid} holds other slots",
                        self.common.id, w.wid, w.node_id
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::testrig::Rig as GenericRig;
    use crate::resources::{partition_allocation, Allocation, NodeSpec};
    use crate::task::DurationSpec;

    type Rig = GenericRig<WorkerpoolBackend>;

    fn rig(nodes: u32, cfg: WorkerpoolConfig) -> Rig {
        let alloc = Allocation::new(nodes, NodeSpec::default());
        let part = partition_allocation(&alloc, 1).unwrap().remove(0);
        let params = BackendParams { bootstrap_s: 0.0, startup_timeout_s: 60.0 };
        Rig::new(WorkerpoolBackend::new("pool-0".into(), part, params, cfg))
    }

    fn func_task(uid: &str, secs: f64) -> TaskDescription {
        TaskDescription::simple(uid, Modality::Function, DurationSpec::Sleep(secs))
    }

    fn runs(rig: &mut Rig) -> Vec<(f64, String, String)> {
        rig.events()
            .into_iter()
            .filter(|e| e.kind == BackendEventKind::TaskRunning)
            .map(|e| (e.ts, e.uid.unwrap(), e.detail.unwrap_or_default()))
            .collect()
    }

    #[test]
    fn default_pool_sizes_one_worker_per_core() {
        let rig = rig(4, WorkerpoolConfig::default());
        assert_eq!(rig.backend.worker_count(), 4 * 56);
    }

    #[test]
    fn dispatch_channel_serializes_starts() {
        // 56 functions, channel 0.002: starts at 0.002, 0.004, ..., 0.112.
        let cfg = WorkerpoolConfig { spawn_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        for i in 0..56 {
            rig.submit(&func_task(&format!("f{i:02}"), 60.0)).unwrap();
        }
        rig.drain();
        let got = runs(&mut rig);
        assert_eq!(got.len(), 56);
        assert!((got[0].0 - 0.002).abs() < 1e-12);
        assert!((got[55].0 - 0.112).abs() < 1e-9);
    }

    #[test]
    fn round_robin_walks_workers_in_order() {
        let cfg = WorkerpoolConfig { workers_per_node: Some(3), ..Default::default() };
        let mut rig = rig(1, cfg);
        for i in 0..3 {
            rig.submit(&func_task(&format!("f{i}"), 60.0)).unwrap();
        }
        rig.drain();
        let wids: Vec<String> = runs(&mut rig).into_iter().map(|(_, _, d)| d).collect();
        assert_eq!(wids, vec!["worker=w0", "worker=w1", "worker=w2"]);
    }

    #[test]
    fn single_worker_is_reused_not_respawned() {
        let cfg = WorkerpoolConfig { workers_per_node: Some(1), ..Default::default() };
        let mut rig = rig(1, cfg);
        rig.submit(&func_task("a", 5.0)).unwrap();
        rig.submit(&func_task("b", 5.0)).unwrap();
        rig.drain();
        let got = runs(&mut rig);
        assert_eq!(got[0].2, "worker=w0");
        assert_eq!(got[1].2, "worker=w0");
        assert!(got[1].0 > 5.0);
        rig.backend.audit().unwrap();
    }

    #[test]
    fn spawn_latency_applies_to_executables_only() {
        let cfg = WorkerpoolConfig { workers_per_node: Some(2), ..Default::default() };
        let mut rig = rig(1, cfg);
        rig.submit(&func_task("f", 1.0)).unwrap();
        let exec = TaskDescription::simple("e", Modality::Executable, DurationSpec::Sleep(1.0));
        rig.submit(&exec).unwrap();
        rig.drain();
        let got = runs(&mut rig);
        let f = got.iter().find(|(_, u, _)| u == "f").unwrap();
        let e = got.iter().find(|(_, u, _)| u == "e").unwrap();
        assert!((f.0 - 0.002).abs() < 1e-12);
        assert!((e.0 - 0.034).abs() < 1e-12, "exec start pays channel + spawn: {}", e.0);
    }

    #[test]
    fn node_fit_gates_dispatch_even_with_idle_workers() {
        let cfg = WorkerpoolConfig {
            workers_per_node: Some(2),
            spawn_latency_s: 0.0,
            ..Default::default()
        };
        let mut rig = rig(1, cfg);
        let mut fat = func_task("fat", 10.0);
        fat.cores = 55;
        rig.submit(&fat).unwrap();
        let mut pair = func_task("pair", 5.0);
        pair.cores = 2;
        rig.submit(&pair).unwrap();
        rig.drain();
        let got = runs(&mut rig);
        assert_eq!(got[0].1, "fat");
        // w1 idles the whole time, but only one core is free until fat ends.
        assert!(got[1].0 > 10.0, "pair had to wait for cores: {}", got[1].0);
        rig.backend.audit().unwrap();
    }

    #[test]
    fn rejects_multinode_and_oversize_shapes() {
        let mut rig = rig(2, WorkerpoolConfig::default());
        let mut spanned = func_task("s", 1.0);
        spanned.node_span = Some(2);
        assert_eq!(rig.submit(&spanned).unwrap_err(), SubmitError::Rejected);
        let mut wide = func_task("w", 1.0);
        wide.cores = 57;
        assert_eq!(rig.submit(&wide).unwrap_err(), SubmitError::Rejected);
        let mut many_gpu = func_task("g", 1.0);
        many_gpu.gpus = 9;
        assert_eq!(rig.submit(&many_gpu).unwrap_err(), SubmitError::Rejected);
    }

    #[test]
    fn gpu_tasks_occupy_node_gpus() {
        let cfg = WorkerpoolConfig { workers_per_node: Some(16), spawn_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        for i in 0..9 {
            let mut t = func_task(&format!("g{i}"), 10.0);
            t.gpus = 1;
            rig.submit(&t).unwrap();
        }
        rig.drain();
        let got = runs(&mut rig);
        // 8 GPUs per node: the ninth task waits for a release.
        assert!(got[7].0 < 1.0);
        assert!(got[8].0 > 10.0);
        rig.backend.audit().unwrap();
    }

    #[test]
    fn cancel_and_failure_free_workers() {
        let cfg = WorkerpoolConfig { workers_per_node: Some(1), spawn_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        let sid_a = rig.submit(&func_task("a", 100.0)).unwrap();
        let sid_b = rig.submit(&func_task("b", 100.0)).unwrap();
        rig.step(); // a starts on the only worker
        rig.backend.cancel(&sid_a, 1.0, &mut rig.clock).unwrap();
        rig.step(); // b takes the freed worker
        rig.backend.inject_failure(2.0, "oom");
        let events = rig.events();
        let canceled = events.iter().filter(|e| e.kind == BackendEventKind::TaskCanceled).count();
        let failed = events.iter().filter(|e| e.kind == BackendEventKind::TaskFailed).count();
        assert_eq!((canceled, failed), (1, 1));
        assert_eq!(rig.backend.lifecycle(), InstanceState::InstanceFailed);
        assert!(matches!(
            rig.backend.cancel(&sid_b, 3.0, &mut rig.clock),
            Err(CancelError::AlreadyTerminal(_))
        ));
        rig.backend.audit().unwrap();
    }
}
