//! Wall-clock backend implementations. Completions come from the operating
//! system (child exits, worker replies on pipes), surfaced through `on_tick`;
//! no virtual timers are armed. Timestamps are seconds since run start,
//! supplied by the run loop.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

use crate::backend::{
    Backend, BackendActionKind, BackendDescriptor, BackendEvent, BackendEventKind, BackendFamily,
    BackendParams, CancelError, InstanceCommon, SubmitError, TimerHost,
};
use crate::backends::capped::CappedConfig;
use crate::resources::{Partition, ResourceRequest, SlotMap};
use crate::task::{DurationSpec, InstanceState, Modality, TaskDescription};

use super::proc::{kill_quiet, poll_exit, spawn_body};
use super::wire::{read_frame, write_frame, Request, Response};

struct QueuedTask {
    uid: String,
    req: ResourceRequest,
    duration: DurationSpec,
}

struct RunningChild {
    uid: String,
    child: Child,
}

/// Process launcher shared by the capped and hierarchical families in real
/// mode: FCFS queue over a slot map, every started task an actual child
/// process. The capped variant additionally bounds concurrent children.
pub struct RealProcBackend {
    common: InstanceCommon,
    family: BackendFamily,
    cap: Option<u32>,
    slots: SlotMap,
    queue: VecDeque<QueuedTask>,
    children: Vec<RunningChild>,
    sid_to_uid: BTreeMap<String, String>,
    submitted: BTreeSet<String>,
    terminal: BTreeSet<String>,
}

impl RealProcBackend {
    pub fn hierarchical(id: String, partition: Partition, params: BackendParams) -> Self {
        Self::build(id, partition, params, BackendFamily::Hierarchical, None)
    }

    pub fn capped(id: String, partition: Partition, params: BackendParams, cfg: CappedConfig) -> Self {
        Self::build(id, partition, params, BackendFamily::Capped, Some(cfg.cap))
    }

    fn build(
        id: String,
        partition: Partition,
        params: BackendParams,
        family: BackendFamily,
        cap: Option<u32>,
    ) -> Self {
        let slots = SlotMap::for_partition(&partition);
        RealProcBackend {
            common: InstanceCommon::new(id, partition, params),
            family,
            cap,
            slots,
            queue: VecDeque::new(),
            children: Vec::new(),
            sid_to_uid: BTreeMap::new(),
            submitted: BTreeSet::new(),
            terminal: BTreeSet::new(),
        }
    }

    fn finish(&mut self, now: f64, uid: &str, kind: BackendEventKind, detail: Option<String>) {
        self.terminal.insert(uid.to_string());
        self.common.push_task_event(now, kind, uid, detail);
    }

    /// Strict FCFS: launch from the head while the cap and the slot map
    /// allow it; a blocked head blocks the queue.
    fn try_launch(&mut self, now: f64) {
        while let Some(head) = self.queue.front() {
            if self.cap.is_some_and(|cap| self.children.len() as u32 >= cap) {
                return;
            }
            if !self.slots.can_place(&head.req) {
                return;
            }
            let task = self.queue.pop_front().expect("peeked");
            self.slots.acquire(&task.uid, &task.req).expect("placement checked");
            let stub = TaskDescription {
                uid: task.uid.clone(),
                modality: Modality::Executable,
                cores: task.req.cores,
                gpus: task.req.gpus,
                duration: task.duration,
                payload: String::new(),
                node_span: task.req.node_span,
            };
            match spawn_body(&stub) {
                Ok(child) => {
                    self.common.push_task_event(now, BackendEventKind::TaskRunning, &task.uid, None);
                    self.children.push(RunningChild { uid: task.uid, child });
                }
                Err(e) => {
                    self.slots.release(&task.uid).expect("just acquired");
                    self.finish(
                        now,
                        &task.uid,
                        BackendEventKind::TaskFailed,
                        Some(format!("spawn failed: {e}")),
                    );
                }
            }
        }
    }

    fn reap(&mut self, now: f64) {
        let mut i = 0;
        while i < self.children.len() {
            match poll_exit(&mut self.children[i].child) {
                Ok(None) => {
                    i += 1;
                    continue;
                }
                Ok(Some(success)) => {
                    let done = self.children.swap_remove(i);
                    self.slots.release(&done.uid).expect("running task held slots");
                    if success {
                        self.finish(now, &done.uid, BackendEventKind::TaskDone, None);
                    } else {
                        self.finish(
                            now,
                            &done.uid,
                            BackendEventKind::TaskFailed,
                            Some("nonzero exit".to_string()),
                        );
                    }
                }
                Err(e) => {
                    let mut broken = self.children.swap_remove(i);
                    kill_quiet(&mut broken.child);
                    self.slots.release(&broken.uid).expect("running task held slots");
                    self.finish(
                        now,
                        &broken.uid,
                        BackendEventKind::TaskFailed,
                        Some(format!("wait failed: {e}")),
                    );
                }
            }
        }
    }
}

impl Backend for RealProcBackend {
    fn id(&self) -> &str {
        &self.common.id
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::for_family(self.family)
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
        self.queue.len() + self.children.len()
    }

    /// Nothing to provision for a process launcher: ready at the measured
    /// start instant, ignoring any configured bootstrap model.
    fn begin_bootstrap(&mut self, now: f64, _timers: &mut dyn TimerHost) {
        self.common.finish_bootstrap(now);
    }

    fn submit(
        &mut self,
        desc: &TaskDescription,
        now: f64,
        _timers: &mut dyn TimerHost,
    ) -> Result<String, SubmitError> {
        self.common.ensure_ready()?;
        if desc.modality != Modality::Executable {
            return Err(SubmitError::UnsupportedModality);
        }
        let req = ResourceRequest::from(desc);
        if !self.slots.fits_capacity(&req) {
            return Err(SubmitError::Rejected);
        }
        if !self.submitted.insert(desc.uid.clone()) {
            return Err(SubmitError::DuplicateSubmission);
        }
        let sid = self.common.next_submission_id();
        self.sid_to_uid.insert(sid.clone(), desc.uid.clone());
        self.queue.push_back(QueuedTask { uid: desc.uid.clone(), req, duration: desc.duration });
        self.try_launch(now);
        Ok(sid)
    }

    fn cancel(
        &mut self,
        submission_id: &str,
        now: f64,
        _timers: &mut dyn TimerHost,
    ) -> Result<(), CancelError> {
        let uid = self
            .sid_to_uid
            .get(submission_id)
            .cloned()
            .ok_or_else(|| CancelError::UnknownSubmission(submission_id.to_string()))?;
        if self.terminal.contains(&uid) {
            return Err(CancelError::AlreadyTerminal(uid));
        }
        if let Some(pos) = self.queue.iter().position(|t| t.uid == uid) {
            self.queue.remove(pos);
        } else if let Some(pos) = self.children.iter().position(|c| c.uid == uid) {
            let mut running = self.children.swap_remove(pos);
            kill_quiet(&mut running.child);
            self.slots.release(&uid).expect("running task held slots");
        } else {
            return Err(CancelError::UnknownSubmission(submission_id.to_string()));
        }
        self.finish(now, &uid, BackendEventKind::TaskCanceled, None);
        self.try_launch(now);
        Ok(())
    }

    fn handle_action(&mut self, _kind: BackendActionKind, _now: f64, _timers: &mut dyn TimerHost) {
        // Real backends arm no timers; nothing can route here.
    }

    fn on_tick(&mut self, now: f64, _timers: &mut dyn TimerHost) {
        if self.common.lifecycle != InstanceState::Ready {
            return;
        }
        self.reap(now);
        self.try_launch(now);
    }

    fn poll_events(&mut self, up_to: f64) -> Vec<BackendEvent> {
        self.common.poll_events(up_to)
    }

    fn inject_failure(&mut self, now: f64, cause: &str) {
        for mut running in std::mem::take(&mut self.children) {
            kill_quiet(&mut running.child);
            self.slots.release(&running.uid).expect("running task held slots");
            self.finish(now, &running.uid, BackendEventKind::TaskFailed, Some(cause.to_string()));
        }
        for queued in std::mem::take(&mut self.queue) {
            self.finish(now, &queued.uid, BackendEventKind::TaskFailed, Some(cause.to_string()));
        }
        self.common.lifecycle = InstanceState::InstanceFailed;
        self.common.push_event(BackendEvent {
            ts: now,
            kind: BackendEventKind::InstanceFailed,
            uid: None,
            detail: Some(cause.to_string()),
        });
    }

    fn shutdown(&mut self, _now: f64) {
        for mut running in std::mem::take(&mut self.children) {
            kill_quiet(&mut running.child);
            let _ = self.slots.release(&running.uid);
        }
        self.queue.clear();
        if self.common.lifecycle != InstanceState::InstanceFailed {
            self.common.lifecycle = InstanceState::Stopped;
        }
    }

    fn audit(&self) -> Result<(), String> {
        self.slots.check_conservation()?;
        if let Some(cap) = self.cap {
            if self.children.len() as u32 > cap {
                return Err(format!(
                    "{}: {} children exceed cap {cap}",
                    self.common.id,
                    self.children.len()
                ));
            }
        }
        for running in &self.children {
            if self.slots.assignment(&running.uid).is_none() {
                return Err(format!("{}: child {} holds no slots", self.common.id, running.uid));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum WorkerState {
    /// Spawned, ping not yet acknowledged.
    Booting,
    Idle,
    Busy { uid: String },
    Dead,
}

enum PoolMsg {
    Resp(usize, Response),
    Eof(usize),
}

struct WorkerHandle {
    child: Child,
    stdin: Option<ChildStdin>,
    state: WorkerState,
    /// One replacement per seat; a second death retires the seat.
    respawned: bool,
    /// Set when we killed it on purpose (cancel, shutdown).
    expect_eof: bool,
}

/// Pool of persistent worker processes. Function tasks become framed
/// requests to an idle worker; executable tasks are spawned directly by the
/// pool so workers never fork.
pub struct RealWorkerpool {
    common: InstanceCommon,
    worker_bin: PathBuf,
    seats: usize,
    workers: Vec<WorkerHandle>,
    tx: Sender<PoolMsg>,
    rx: Receiver<PoolMsg>,
    slots: SlotMap,
    queue: VecDeque<QueuedFunc>,
    exec_children: Vec<RunningChild>,
    sid_to_uid: BTreeMap<String, String>,
    submitted: BTreeSet<String>,
    terminal: BTreeSet<String>,
    boot_deadline: f64,
    stop_detail: Option<String>,
}

struct QueuedFunc {
    uid: String,
    req: ResourceRequest,
    duration: DurationSpec,
    modality: Modality,
}

impl RealWorkerpool {
    pub fn new(
        id: String,
        partition: Partition,
        params: BackendParams,
        cfg: crate::backends::workerpool::WorkerpoolConfig,
        worker_bin: PathBuf,
    ) -> Self {
        let per_node = cfg.workers_per_node.unwrap_or_else(|| partition.spec.usable_cores()).max(1);
        let worker_count = (per_node * partition.node_count()) as usize;
        let (tx, rx) = channel();
        let slots = SlotMap::for_partition(&partition);
        RealWorkerpool {
            common: InstanceCommon::new(id, partition, params),
            worker_bin,
            seats: worker_count,
            workers: Vec::with_capacity(worker_count),
            tx,
            rx,
            slots,
            queue: VecDeque::new(),
            exec_children: Vec::new(),
            sid_to_uid: BTreeMap::new(),
            submitted: BTreeSet::new(),
            terminal: BTreeSet::new(),
            boot_deadline: f64::INFINITY,
            stop_detail: None,
        }
    }

    fn spawn_worker(&mut self, seat: usize) -> std::io::Result<WorkerHandle> {
        let mut child = Command::new(&self.worker_bin)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let tx = self.tx.clone();
        std::thread::spawn(move || loop {
            match read_frame(&mut stdout) {
                Ok(Some(frame)) => {
                    if let Some(resp) = Response::parse(&frame) {
                        if tx.send(PoolMsg::Resp(seat, resp)).is_err() {
                            return;
                        }
                    }
                }
                Ok(None) | Err(_) => {
                    let _ = tx.send(PoolMsg::Eof(seat));
                    return;
                }
            }
        });
        let ping = Request::new("boot", "ping", "");
        write_frame(&mut stdin, &ping.encode())?;
        Ok(WorkerHandle {
            child,
            stdin: Some(stdin),
            state: WorkerState::Booting,
            respawned: false,
            expect_eof: false,
        })
    }

    fn finish(&mut self, now: f64, uid: &str, kind: BackendEventKind, detail: Option<String>) {
        self.terminal.insert(uid.to_string());
        self.common.push_task_event(now, kind, uid, detail);
    }

    fn request_for(duration: DurationSpec, uid: &str) -> Request {
        match duration {
            DurationSpec::Null => Request::new(uid, "noop", ""),
            DurationSpec::Sleep(s) => Request::new(uid, "sleep", &format!("{s}")),
        }
    }

    /// Feed the queue: function tasks need an idle worker plus slots,
    /// executable tasks only slots. FCFS with no lookahead.
    fn try_dispatch(&mut self, now: f64) {
        while let Some(head) = self.queue.front() {
            if !self.slots.can_place(&head.req) {
                return;
            }
            match head.modality {
                Modality::Function => {
                    let Some(seat) =
                        self.workers.iter().position(|w| w.state == WorkerState::Idle)
                    else {
                        return;
                    };
                    let task = self.queue.pop_front().expect("peeked");
                    self.slots.acquire(&task.uid, &task.req).expect("placement checked");
                    let frame = Self::request_for(task.duration, &task.uid).encode();
                    let sent = self.workers[seat]
                        .stdin
                        .as_mut()
                        .map(|w| write_frame(w, &frame))
                        .unwrap_or_else(|| {
                            Err(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "no stdin"))
                        });
                    match sent {
                        Ok(()) => {
                            self.workers[seat].state = WorkerState::Busy { uid: task.uid.clone() };
                            self.common.push_task_event(
                                now,
                                BackendEventKind::TaskRunning,
                                &task.uid,
                                None,
                            );
                        }
                        Err(_) => {
                            // Pipe already broken: put the task back and let
                            // the EOF path retire or replace the worker.
                            self.slots.release(&task.uid).expect("just acquired");
                            self.workers[seat].state = WorkerState::Dead;
                            kill_quiet(&mut self.workers[seat].child);
                            self.queue.push_front(task);
                        }
                    }
                }
                Modality::Executable => {
                    let task = self.queue.pop_front().expect("peeked");
                    self.slots.acquire(&task.uid, &task.req).expect("placement checked");
                    let stub = TaskDescription {
                        uid: task.uid.clone(),
                        modality: Modality::Executable,
                        cores: task.req.cores,
                        gpus: task.req.gpus,
                        duration: task.duration,
                        payload: String::new(),
                        node_span: task.req.node_span,
                    };
                    match spawn_body(&stub) {
                        Ok(child) => {
                            self.common.push_task_event(
                                now,
                                BackendEventKind::TaskRunning,
                                &task.uid,
                                None,
                            );
                            self.exec_children.push(RunningChild { uid: task.uid, child });
                        }
                        Err(e) => {
                            self.slots.release(&task.uid).expect("just acquired");
                            self.finish(
                                now,
                                &task.uid,
                                BackendEventKind::TaskFailed,
                                Some(format!("spawn failed: {e}")),
                            );
                        }
                    }
                }
            }
        }
    }

    fn handle_msg(&mut self, msg: PoolMsg, now: f64) {
        match msg {
            PoolMsg::Resp(seat, resp) => {
                if resp.uid == "boot" {
                    if self.workers[seat].state == WorkerState::Booting {
                        self.workers[seat].state = WorkerState::Idle;
                    }
                    return;
                }
                let WorkerState::Busy { uid } = self.workers[seat].state.clone() else {
                    return;
                };
                if uid != resp.uid {
                    return;
                }
                self.workers[seat].state = WorkerState::Idle;
                self.slots.release(&uid).expect("busy worker held slots");
                if resp.ok {
                    self.finish(now, &uid, BackendEventKind::TaskDone, None);
                } else {
                    self.finish(now, &uid, BackendEventKind::TaskFailed, Some(resp.detail));
                }
            }
            PoolMsg::Eof(seat) => {
                kill_quiet(&mut self.workers[seat].child);
                let expected = std::mem::replace(&mut self.workers[seat].expect_eof, false);
                if let WorkerState::Busy { uid } = self.workers[seat].state.clone() {
                    self.slots.release(&uid).expect("busy worker held slots");
                    if !expected {
                        self.finish(
                            now,
                            &uid,
                            BackendEventKind::TaskFailed,
                            Some("WorkerDied".to_string()),
                        );
                    }
                }
                self.workers[seat].state = WorkerState::Dead;
                if !self.workers[seat].respawned {
                    if let Ok(mut fresh) = self.spawn_worker(seat) {
                        fresh.respawned = true;
                        let old = std::mem::replace(&mut self.workers[seat], fresh);
                        drop(old);
                    }
                }
            }
        }
    }

    fn reap_exec(&mut self, now: f64) {
        let mut i = 0;
        while i < self.exec_children.len() {
            match poll_exit(&mut self.exec_children[i].child) {
                Ok(None) => i += 1,
                Ok(Some(success)) => {
                    let done = self.exec_children.swap_remove(i);
                    self.slots.release(&done.uid).expect("running task held slots");
                    let (kind, detail) = if success {
                        (BackendEventKind::TaskDone, None)
                    } else {
                        (BackendEventKind::TaskFailed, Some("nonzero exit".to_string()))
                    };
                    self.finish(now, &done.uid, kind, detail);
                }
                Err(e) => {
                    let mut broken = self.exec_children.swap_remove(i);
                    kill_quiet(&mut broken.child);
                    self.slots.release(&broken.uid).expect("running task held slots");
                    self.finish(
                        now,
                        &broken.uid,
                        BackendEventKind::TaskFailed,
                        Some(format!("wait failed: {e}")),
                    );
                }
            }
        }
    }
}

impl Backend for RealWorkerpool {
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
        self.queue.len()
            + self.exec_children.len()
            + self
                .workers
                .iter()
                .filter(|w| matches!(w.state, WorkerState::Busy { .. }))
                .count()
    }

    /// Spawn every worker and ping it; READY is emitted from `on_tick` at
    /// the measured instant the last ping is acknowledged.
    fn begin_bootstrap(&mut self, now: f64, _timers: &mut dyn TimerHost) {
        self.boot_deadline = now + self.common.params.startup_timeout_s;
        for seat in 0..self.seats {
            match self.spawn_worker(seat) {
                Ok(handle) => self.workers.push(handle),
                Err(e) => {
                    self.common.lifecycle = InstanceState::InstanceFailed;
                    self.common.push_event(BackendEvent {
                        ts: now,
                        kind: BackendEventKind::InstanceFailed,
                        uid: None,
                        detail: Some(format!("worker spawn failed: {e}")),
                    });
                    return;
                }
            }
        }
    }

    fn submit(
        &mut self,
        desc: &TaskDescription,
        now: f64,
        _timers: &mut dyn TimerHost,
    ) -> Result<String, SubmitError> {
        self.common.ensure_ready()?;
        let req = ResourceRequest::from(desc);
        if desc.node_span.map_or(false, |span| span > 1) {
            return Err(SubmitError::Rejected);
        }
        if !self.slots.fits_capacity(&req) {
            return Err(SubmitError::Rejected);
        }
        if !self.submitted.insert(desc.uid.clone()) {
            return Err(SubmitError::DuplicateSubmission);
        }
        let sid = self.common.next_submission_id();
        self.sid_to_uid.insert(sid.clone(), desc.uid.clone());
        self.queue.push_back(QueuedFunc {
            uid: desc.uid.clone(),
            req,
            duration: desc.duration,
            modality: desc.modality,
        });
        self.try_dispatch(now);
        Ok(sid)
    }

    fn cancel(
        &mut self,
        submission_id: &str,
        now: f64,
        _timers: &mut dyn TimerHost,
    ) -> Result<(), CancelError> {
        let uid = self
            .sid_to_uid
            .get(submission_id)
            .cloned()
            .ok_or_else(|| CancelError::UnknownSubmission(submission_id.to_string()))?;
        if self.terminal.contains(&uid) {
            return Err(CancelError::AlreadyTerminal(uid));
        }
        if let Some(pos) = self.queue.iter().position(|t| t.uid == uid) {
            self.queue.remove(pos);
        } else if let Some(pos) = self.exec_children.iter().position(|c| c.uid == uid) {
            let mut running = self.exec_children.swap_remove(pos);
            kill_quiet(&mut running.child);
            self.slots.release(&uid).expect("running task held slots");
        } else if let Some(seat) = self
            .workers
            .iter()
            .position(|w| matches!(&w.state, WorkerState::Busy { uid: b } if *b == uid))
        {
            // The only way to interrupt an in-process body is to kill the
            // worker; the EOF path respawns a replacement.
            self.workers[seat].expect_eof = true;
            self.workers[seat].state = WorkerState::Dead;
            kill_quiet(&mut self.workers[seat].child);
            self.slots.release(&uid).expect("busy worker held slots");
        } else {
            return Err(CancelError::UnknownSubmission(submission_id.to_string()));
        }
        self.finish(now, &uid, BackendEventKind::TaskCanceled, None);
        self.try_dispatch(now);
        Ok(())
    }

    fn handle_action(&mut self, _kind: BackendActionKind, _now: f64, _timers: &mut dyn TimerHost) {
        // Real backends arm no timers; nothing can route here.
    }

    fn on_tick(&mut self, now: f64, _timers: &mut dyn TimerHost) {
        while let Ok(msg) = self.rx.try_recv() {
            self.handle_msg(msg, now);
        }
        if self.common.lifecycle == InstanceState::Booting {
            let all_acked = !self.workers.is_empty()
                && self.workers.iter().all(|w| w.state != WorkerState::Booting);
            if all_acked {
                self.common.finish_bootstrap(now);
            } else if now > self.boot_deadline {
                for w in &mut self.workers {
                    w.expect_eof = true;
                    kill_quiet(&mut w.child);
                }
                self.common.bootstrap_timed_out(now);
                return;
            }
        }
        if self.common.lifecycle != InstanceState::Ready {
            return;
        }
        self.reap_exec(now);
        self.try_dispatch(now);
    }

    fn poll_events(&mut self, up_to: f64) -> Vec<BackendEvent> {
        self.common.poll_events(up_to)
    }

    fn inject_failure(&mut self, now: f64, cause: &str) {
        let busy: Vec<String> = self
            .workers
            .iter()
            .filter_map(|w| match &w.state {
                WorkerState::Busy { uid } => Some(uid.clone()),
                _ => None,
            })
            .collect();
        for w in &mut self.workers {
            w.expect_eof = true;
            w.respawned = true;
            w.state = WorkerState::Dead;
            kill_quiet(&mut w.child);
        }
        for uid in busy {
            self.slots.release(&uid).expect("busy worker held slots");
            self.finish(now, &uid, BackendEventKind::TaskFailed, Some(cause.to_string()));
        }
        for mut running in std::mem::take(&mut self.exec_children) {
            kill_quiet(&mut running.child);
            self.slots.release(&running.uid).expect("running task held slots");
            self.finish(now, &running.uid, BackendEventKind::TaskFailed, Some(cause.to_string()));
        }
        for queued in std::mem::take(&mut self.queue) {
            self.finish(now, &queued.uid, BackendEventKind::TaskFailed, Some(cause.to_string()));
        }
        self.common.lifecycle = InstanceState::InstanceFailed;
        self.common.push_event(BackendEvent {
            ts: now,
            kind: BackendEventKind::InstanceFailed,
            uid: None,
            detail: Some(cause.to_string()),
        });
    }

    /// Ask every live worker for an audited shutdown and total up the
    /// child-spawn counts they report.
    fn shutdown(&mut self, _now: f64) {
        for mut running in std::mem::take(&mut self.exec_children) {
            kill_quiet(&mut running.child);
            let _ = self.slots.release(&running.uid);
        }
        self.queue.clear();
        let mut awaiting = Vec::new();
        for (seat, w) in self.workers.iter_mut().enumerate() {
            match w.state {
                WorkerState::Idle | WorkerState::Booting => {
                    let frame = Request::new("stop", "shutdown", "").encode();
                    let sent =
                        w.stdin.as_mut().map(|s| write_frame(s, &frame).is_ok()).unwrap_or(false);
                    w.expect_eof = true;
                    w.respawned = true;
                    if sent {
                        awaiting.push(seat);
                    } else {
                        kill_quiet(&mut w.child);
                        w.state = WorkerState::Dead;
                    }
                }
                WorkerState::Busy { ref uid } => {
                    let uid = uid.clone();
                    w.expect_eof = true;
                    w.respawned = true;
                    kill_quiet(&mut w.child);
                    w.state = WorkerState::Dead;
                    let _ = self.slots.release(&uid);
                }
                WorkerState::Dead => {}
            }
        }
        let mut spawned_total = 0u64;
        let mut acked = 0usize;
        let deadline = std::time::Instant::now() + Duration::from_millis(500);
        while acked < awaiting.len() {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            if left.is_zero() {
                break;
            }
            match self.rx.recv_timeout(left) {
                Ok(PoolMsg::Resp(seat, resp)) if resp.uid == "stop" && awaiting.contains(&seat) => {
                    acked += 1;
                    if let Some(n) = resp.detail.strip_prefix("spawned=") {
                        spawned_total += n.parse::<u64>().unwrap_or(0);
                    }
                }
                Ok(_) => {}
                Err(_) => break,
            }
        }
        for w in &mut self.workers {
            kill_quiet(&mut w.child);
            w.state = WorkerState::Dead;
        }
        let mut detail = format!("spawned={spawned_total}");
        if acked < awaiting.len() {
            let _ = write!(detail, " unacked={}", awaiting.len() - acked);
        }
        self.stop_detail = Some(detail);
        if self.common.lifecycle != InstanceState::InstanceFailed {
            self.common.lifecycle = InstanceState::Stopped;
        }
    }

    fn stop_detail(&self) -> Option<String> {
        self.stop_detail.clone()
    }

    fn audit(&self) -> Result<(), String> {
        self.slots.check_conservation()?;
        for w in &self.workers {
            if let WorkerState::Busy { uid } = &w.state {
                if self.slots.assignment(uid).is_none() {
                    return Err(format!("{}: busy worker holds no slots for {uid}", self.common.id));
                }
            }
        }
        for running in &self.exec_children {
            if self.slots.assignment(&running.uid).is_none() {
                return Err(format!("{}: child {} holds no slots", self.common.id, running.uid));
            }
        }
        Ok(())
    }
}
