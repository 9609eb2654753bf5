//! Executor backend contract: capability descriptors, lifecycle, the event
//! stream backends emit, and the trait every backend family implements.
//!
//! Backends are pull-based: they never push into the agent. The agent calls
//! `poll_events(up_to)` and consumes everything the backend produced up to
//! that instant. In sim mode backends schedule their own future work through
//! a [`TimerHost`]; in real mode completions arrive from watcher threads and
//! are surfaced by `on_tick`.

use std::collections::VecDeque;

use thiserror::Error;

use crate::resources::Partition;
use crate::task::{InstanceState, TaskDescription};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackendFamily {
    /// Flat launcher with a hard cap on concurrent launched tasks.
    Capped,
    /// Queue + slot scheduler with optional conservative backfill.
    Hierarchical,
    /// Persistent workers fed through message channels.
    Workerpool,
}

impl BackendFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BackendFamily::Capped => "capped",
            BackendFamily::Hierarchical => "hier",
            BackendFamily::Workerpool => "pool",
        }
    }

    pub fn parse(s: &str) -> Option<BackendFamily> {
        Some(match s {
            "capped" => BackendFamily::Capped,
            "hier" | "hierarchical" => BackendFamily::Hierarchical,
            "pool" | "workerpool" => BackendFamily::Workerpool,
            _ => return None,
        })
    }
}

/// What a backend family can run. Fixed per family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub family: BackendFamily,
    pub supports_exec: bool,
    pub supports_func: bool,
    pub supports_multinode: bool,
    pub supports_partitioning: bool,
}

impl BackendDescriptor {
    pub fn for_family(family: BackendFamily) -> Self {
        match family {
            BackendFamily::Capped => BackendDescriptor {
                family,
                supports_exec: true,
                supports_func: false,
                supports_multinode: true,
                supports_partitioning: false,
            },
            BackendFamily::Hierarchical => BackendDescriptor {
                family,
                supports_exec: true,
                supports_func: false,
                supports_multinode: true,
                supports_partitioning: true,
            },
            BackendFamily::Workerpool => BackendDescriptor {
                family,
                supports_exec: true,
                supports_func: true,
                supports_multinode: false,
                supports_partitioning: false,
            },
        }
    }

    pub fn supports_modality(&self, m: crate::task::Modality) -> bool {
        match m {
            crate::task::Modality::Executable => self.supports_exec,
            crate::task::Modality::Function => self.supports_func,
        }
    }
}

/// Timing model shared by every family. All values in seconds; harness
/// applies time scaling and bootstrap jitter before construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendParams {
    pub bootstrap_s: f64,
    pub startup_timeout_s: f64,
}

impl Default for BackendParams {
    fn default() -> Self {
        BackendParams { bootstrap_s: 0.0, startup_timeout_s: 60.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendEventKind {
    Ready,
    TaskRunning,
    TaskDone,
    TaskFailed,
    TaskCanceled,
    CapacityFreed,
    InstanceFailed,
}

/// One pull-model event. `uid` is present for task events only.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendEvent {
    pub ts: f64,
    pub kind: BackendEventKind,
    pub uid: Option<String>,
    pub detail: Option<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SubmitError {
    #[error("instance is not ready")]
    NotReady,
    #[error("instance has failed or stopped")]
    InstanceDown,
    #[error("request can never fit this instance")]
    Rejected,
    #[error("modality not supported by this backend family")]
    UnsupportedModality,
    #[error("uid already submitted to this instance")]
    DuplicateSubmission,
}

#[derive(Debug, Error, PartialEq)]
pub enum CancelError {
    #[error("unknown submission `{0}`")]
    UnknownSubmission(String),
    #[error("submission `{0}` already reached a terminal state")]
    AlreadyTerminal(String),
}

/// Internal timers a backend may arm. The enclosing run loop routes the fired
/// action back to `handle_action` on the owning instance.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendActionKind {
    BootstrapDone,
    BootstrapTimeout,
    /// A launch pipeline slot completed: the task starts running now.
    LaunchFire { uid: String },
    /// A modeled task body finished.
    Complete { uid: String },
}

/// Sink for future backend work. Sim mode maps this onto the virtual clock;
/// real mode backends do not arm timers (their futures are real processes).
pub trait TimerHost {
    fn schedule(&mut self, fire_at: f64, kind: BackendActionKind);
}

/// TimerHost that drops everything; for real-mode call sites.
pub struct NoTimers;

impl TimerHost for NoTimers {
    fn schedule(&mut self, _fire_at: f64, _kind: BackendActionKind) {}
}

// Lets a single backend be driven standalone by its own clock (tests, tools).
// The harness wraps actions with an instance index instead.
impl TimerHost for crate::sim::SimClock<BackendActionKind> {
    fn schedule(&mut self, fire_at: f64, kind: BackendActionKind) {
        self.schedule_at(fire_at, kind).expect("backend scheduled into the past");
    }
}

pub trait Backend {
    fn id(&self) -> &str;
    fn descriptor(&self) -> BackendDescriptor;
    fn lifecycle(&self) -> InstanceState;
    fn partition(&self) -> &Partition;

    /// Free core slots right now; capacity hint for adaptive workloads and
    /// least-loaded routing.
    fn free_cores(&self) -> u32;

    /// Tasks accepted and not yet terminal.
    fn in_flight(&self) -> usize;

    fn begin_bootstrap(&mut self, now: f64, timers: &mut dyn TimerHost);

    /// Accept a task; returns the submission id. The backend owns the task
    /// until it emits exactly one terminal event for it.
    fn submit(
        &mut self,
        desc: &TaskDescription,
        now: f64,
        timers: &mut dyn TimerHost,
    ) -> Result<String, SubmitError>;

    fn cancel(
        &mut self,
        submission_id: &str,
        now: f64,
        timers: &mut dyn TimerHost,
    ) -> Result<(), CancelError>;

    fn handle_action(&mut self, kind: BackendActionKind, now: f64, timers: &mut dyn TimerHost);

    /// Real-mode periodic hook: drain OS-side completions, check deadlines.
    fn on_tick(&mut self, _now: f64, _timers: &mut dyn TimerHost) {}

    /// Remove and return all events with ts <= up_to, oldest first.
    fn poll_events(&mut self, up_to: f64) -> Vec<BackendEvent>;

    /// Test hook: kill the instance, failing everything in flight.
    fn inject_failure(&mut self, now: f64, cause: &str);

    /// Orderly stop at end of run; real backends reap children here.
    fn shutdown(&mut self, now: f64);

    /// Detail for the STOPPED record; real pools report child-spawn counts.
    fn stop_detail(&self) -> Option<String> {
        None
    }

    /// Internal consistency check (slot conservation and friends).
    fn audit(&self) -> Result<(), String>;
}

/// Book-keeping shared by every backend implementation.
pub struct InstanceCommon {
    pub id: String,
    pub partition: Partition,
    pub params: BackendParams,
    pub lifecycle: InstanceState,
    pub outbox: VecDeque<BackendEvent>,
    /// Serialized launch pipeline: next instant the launcher is free.
    pub launcher_free_at: f64,
    next_submission: u64,
    last_event_ts: f64,
}

impl InstanceCommon {
    pub fn new(id: String, partition: Partition, params: BackendParams) -> Self {
        InstanceCommon {
            id,
            partition,
            params,
            lifecycle: InstanceState::Booting,
            outbox: VecDeque::new(),
            launcher_free_at: 0.0,
            next_submission: 0,
            last_event_ts: f64::NEG_INFINITY,
        }
    }

    pub fn next_submission_id(&mut self) -> String {
        let sid = format!("{}:{}", self.id, self.next_submission);
        self.next_submission += 1;
        sid
    }

    /// Emitted timestamps must be non-decreasing per instance.
    pub fn push_event(&mut self, ev: BackendEvent) {
        debug_assert!(
            ev.ts >= self.last_event_ts,
            "{}: event time went backwards: {} -> {}",
            self.id,
            self.last_event_ts,
            ev.ts
        );
        self.last_event_ts = ev.ts;
        self.outbox.push_back(ev);
    }

    pub fn push_task_event(&mut self, ts: f64, kind: BackendEventKind, uid: &str, detail: Option<String>) {
        self.push_event(BackendEvent { ts, kind, uid: Some(uid.to_string()), detail });
    }

    pub fn poll_events(&mut self, up_to: f64) -> Vec<BackendEvent> {
        let mut out = Vec::new();
        while let Some(front) = self.outbox.front() {
            if front.ts <= up_to {
                out.push(self.outbox.pop_front().expect("peeked"));
            } else {
                break;
            }
        }
        out
    }

    /// Begin boot: arms the ready timer and the startup deadline.
    pub fn begin_bootstrap(&mut self, now: f64, timers: &mut dyn TimerHost) {
        self.lifecycle = InstanceState::Booting;
        timers.schedule(now + self.params.bootstrap_s, BackendActionKind::BootstrapDone);
        if self.params.startup_timeout_s.is_finite() {
            timers.schedule(now + self.params.startup_timeout_s, BackendActionKind::BootstrapTimeout);
        }
    }

    /// BootstrapDone timer fired; true if the instance just became ready.
    pub fn finish_bootstrap(&mut self, now: f64) -> bool {
        if self.lifecycle != InstanceState::Booting {
            return false;
        }
        self.lifecycle = InstanceState::Ready;
        self.push_event(BackendEvent { ts: now, kind: BackendEventKind::Ready, uid: None, detail: None });
        true
    }

    /// Startup deadline fired; true if this killed the instance.
    pub fn bootstrap_timed_out(&mut self, now: f64) -> bool {
        if self.lifecycle != InstanceState::Booting {
            return false;
        }
        self.lifecycle = InstanceState::InstanceFailed;
        self.push_event(BackendEvent {
            ts: now,
            kind: BackendEventKind::InstanceFailed,
            uid: None,
            detail: Some("BootstrapTimeout".to_string()),
        });
        true
    }

    /// Claim a slot in the serialized launch pipeline: one launch may start
    /// per `latency` seconds, so k queued launches spread over k*latency.
    pub fn pipeline_slot(&mut self, now: f64, latency: f64) -> f64 {
        let start = now.max(self.launcher_free_at) + latency;
        self.launcher_free_at = start;
        start
    }

    /// Start the next pipeline slot would get, without claiming it.
    pub fn peek_pipeline_slot(&self, now: f64, latency: f64) -> f64 {
        now.max(self.launcher_free_at) + latency
    }

    pub fn ensure_ready(&self) -> Result<(), SubmitError> {
        match self.lifecycle {
            InstanceState::Ready => Ok(()),
            InstanceState::Booting => Err(SubmitError::NotReady),
            InstanceState::InstanceFailed | InstanceState::Stopped => Err(SubmitError::InstanceDown),
        }
    }
}
