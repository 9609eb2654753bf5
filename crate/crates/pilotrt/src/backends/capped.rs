//! Flat launcher with a hard cap on concurrently launched tasks, modeling
//! platform launchers that bound in-flight job steps. A launched task holds
//! its cap slot for its entire runtime, so the concurrency ceiling is
//! min(cap, core fit) and utilization craters once demand exceeds the cap.

use std::collections::{BTreeMap, VecDeque};

use crate::backend::{
    Backend, BackendActionKind, BackendDescriptor, BackendEventKind, BackendFamily, BackendParams,
    CancelError, InstanceCommon, SubmitError, TimerHost,
};
use crate::resources::{Partition, ResourceRequest, SlotAssignment, SlotMap};
use crate::task::{InstanceState, Modality, TaskDescription};

/// Tuning knobs specific to the capped family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CappedConfig {
    /// Hard limit on concurrently launched (running or starting) tasks.
    pub cap: u32,
    /// Seconds per launch pipeline slot.
    pub launch_latency_s: f64,
    /// Extra per-launch seconds per allocated node; models launcher slowdown
    /// on wide allocations. Zero by default.
    pub latency_per_node_s: f64,
    /// Completion offset for zero-duration bodies.
    pub zero_eps_s: f64,
}

impl Default for CappedConfig {
    fn default() -> Self {
        CappedConfig { cap: 112, launch_latency_s: 0.05, latency_per_node_s: 0.0, zero_eps_s: 0.001 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Queued,
    /// Cap slot and cores held; RUNNING event pending in the launch pipeline.
    Launching,
    Running,
    Terminal,
}

struct CapTask {
    sid: String,
    req: ResourceRequest,
    body_s: f64,
    phase: Phase,
    assignment: Option<SlotAssignment>,
}

pub struct CappedBackend {
    common: InstanceCommon,
    cfg: CappedConfig,
    slots: SlotMap,
    wait_queue: VecDeque<String>,
    tasks: BTreeMap<String, CapTask>,
    sid_to_uid: BTreeMap<String, String>,
    /// Tasks holding a cap slot (Launching or Running).
    launched: u32,
}

impl CappedBackend {
    pub fn new(id: String, partition: Partition, params: BackendParams, cfg: CappedConfig) -> Self {
        let slots = SlotMap::for_partition(&partition);
        CappedBackend {
            common: InstanceCommon::new(id, partition, params),
            cfg,
            slots,
            wait_queue: VecDeque::new(),
            tasks: BTreeMap::new(),
            sid_to_uid: BTreeMap::new(),
            launched: 0,
        }
    }

    fn effective_latency(&self) -> f64 {
        self.cfg.launch_latency_s
            + self.cfg.latency_per_node_s * self.common.partition.node_count() as f64
    }

    /// Launch queue heads while cap slots and cores allow. FIFO: a blocked
    /// head blocks everything behind it.
    fn try_launch(&mut self, now: f64, timers: &mut dyn TimerHost) {
        while self.launched < self.cfg.cap {
            let Some(uid) = self.wait_queue.front().cloned() else { break };
            let req = self.tasks[&uid].req;
            if !self.slots.can_place(&req) {
                break;
            }
            self.wait_queue.pop_front();
            let assignment = self.slots.acquire(&uid, &req).expect("checked placeable");
            self.launched += 1;
            let latency = self.effective_latency();
            let start = self.common.pipeline_slot(now, latency);
            let task = self.tasks.get_mut(&uid).expect("queued task is known");
            task.phase = Phase::Launching;
            task.assignment = Some(assignment);
            timers.schedule(start, BackendActionKind::LaunchFire { uid });
        }
    }

    fn release(&mut self, uid: &str) {
        let task = self.tasks.get_mut(uid).expect("known task");
        if task.assignment.take().is_some() {
            self.slots.release(uid).expect("held assignment");
            self.launched -= 1;
        }
        task.phase = Phase::Terminal;
    }
}

impl Backend for CappedBackend {
    fn id(&self) -> &str {
        &self.common.id
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::for_family(BackendFamily::Capped)
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
        if desc.modality != Modality::Executable {
            return Err(SubmitError::UnsupportedModality);
        }
        if self.tasks.contains_key(&desc.uid) {
            return Err(SubmitError::DuplicateSubmission);
        }
        let req = ResourceRequest::from(desc);
        if !self.slots.fits_capacity(&req) {
            return Err(SubmitError::Rejected);
        }
        let sid = self.common.next_submission_id();
        self.sid_to_uid.insert(sid.clone(), desc.uid.clone());
        self.tasks.insert(
            desc.uid.clone(),
            CapTask { sid: sid.clone(), req, body_s: desc.duration_hint(), phase: Phase::Queued, assignment: None },
        );
        self.wait_queue.push_back(desc.uid.clone());
        self.try_launch(now, timers);
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
                self.wait_queue.retain(|u| u != &uid);
                self.tasks.get_mut(&uid).expect("known").phase = Phase::Terminal;
                self.common.push_task_event(now, BackendEventKind::TaskCanceled, &uid, None);
            }
            Phase::Launching | Phase::Running => {
                self.release(&uid);
                self.common.push_task_event(now, BackendEventKind::TaskCanceled, &uid, None);
                self.common.push_event(crate::backend::BackendEvent {
                    ts: now,
                    kind: BackendEventKind::CapacityFreed,
                    uid: None,
                    detail: None,
                });
                self.try_launch(now, timers);
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
                // Cancels and failures between scheduling and firing leave a
                // terminal phase behind; a stale timer is then a no-op.
                let Some(task) = self.tasks.get_mut(&uid) else { return };
                if task.phase != Phase::Launching {
                    return;
                }
                task.phase = Phase::Running;
                let body = task.body_s;
                let sid = task.sid.clone();
                self.common
                    .push_task_event(now, BackendEventKind::TaskRunning, &uid, Some(format!("sub={sid}")));
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
                self.common.push_event(crate::backend::BackendEvent {
                    ts: now,
                    kind: BackendEventKind::CapacityFreed,
                    uid: None,
                    detail: None,
                });
                self.try_launch(now, timers);
            }
        }
    }

    fn poll_events(&mut self, up_to: f64) -> Vec<crate::backend::BackendEvent> {
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
        self.wait_queue.clear();
        self.common.lifecycle = InstanceState::InstanceFailed;
        self.common.push_event(crate::backend::BackendEvent {
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
        if self.launched > self.cfg.cap {
            return Err(format!("{}: {} launched exceeds cap {}", self.common.id, self.launched, self.cfg.cap));
        }
        let holding = self
            .tasks
            .values()
            .filter(|t| matches!(t.phase, Phase::Launching | Phase::Running))
            .count() as u32;
        if holding != self.launched {
            return Err(format!(
                "{}: launched counter {} != tasks holding slots {}",
                self.common.id, self.launched, holding
            ));
        }
        Ok(())
    }
}
