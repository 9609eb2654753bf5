//! Hierarchical launcher: tasks become batch jobs in a queue owned by the
//! instance, which schedules them against its own partition. The queue runs
//! FCFS; with backfill enabled, short hinted jobs may jump a blocked head as
//! long as they cannot delay the head's reserved start.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::backend::{
    Backend, BackendActionKind, BackendDescriptor, BackendEvent, BackendEventKind, BackendFamily,
    BackendParams, CancelError, InstanceCommon, SubmitError, TimerHost,
};
use crate::resources::{Partition, ResourceRequest, SlotAssignment, SlotMap};
use crate::task::{DurationSpec, InstanceState, Modality, TaskDescription};

/// Queue discipline for pending jobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueuePolicy {
    /// Strict arrival order; a blocked head blocks everything behind it.
    Fcfs,
    /// Arrival order with conservative backfill around a blocked head.
    FcfsBackfill,
}

/// Tuning knobs specific to the hierarchical family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierConfig {
    pub policy: QueuePolicy,
    /// Seconds per launch pipeline slot.
    pub launch_latency_s: f64,
    /// Completion offset for zero-duration bodies.
    pub zero_eps_s: f64,
}

impl Default for HierConfig {
    fn default() -> Self {
        HierConfig { policy: QueuePolicy::FcfsBackfill, launch_latency_s: 0.01, zero_eps_s: 0.001 }
    }
}

/// One queued batch job. Serializes to a single TSV line and parses back
/// without loss, mirroring a job script handed to an external queue.
#[derive(Debug, Clone, PartialEq)]
pub struct JobDescription {
    pub uid: String,
    pub cores: u32,
    pub gpus: u32,
    /// Spread over exactly this many nodes when set.
    pub node_span: Option<u32>,
    /// Expected body seconds; jobs without one are opaque to backfill.
    pub walltime_hint_s: Option<f64>,
    pub body: DurationSpec,
    pub payload: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum JobCodecError {
    #[error("job line has {0} fields, expected 7")]
    FieldCount(usize),
    #[error("bad value in field `{field}`: {text}")]
    BadField { field: &'static str, text: String },
}

impl JobDescription {
    pub fn from_task(desc: &TaskDescription) -> Self {
        JobDescription {
            uid: desc.uid.clone(),
            cores: desc.cores,
            gpus: desc.gpus,
            node_span: desc.node_span,
            walltime_hint_s: Some(desc.duration_hint()),
            body: desc.duration,
            payload: desc.payload.clone(),
        }
    }

    /// TSV form: uid, cores, gpus, span, hint, body, payload. Absent values
    /// serialize as `-`. The payload must stay tab-free.
    pub fn to_line(&self) -> String {
        debug_assert!(!self.payload.contains('\t') && !self.payload.contains('\n'));
        let span = self.node_span.map_or("-".to_string(), |n| n.to_string());
        let hint = self.walltime_hint_s.map_or("-".to_string(), |s| s.to_string());
        let body = match self.body {
            DurationSpec::Null => "-".to_string(),
            DurationSpec::Sleep(s) => s.to_string(),
        };
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.uid, self.cores, self.gpus, span, hint, body, self.payload
        )
    }

    pub fn parse_line(line: &str) -> Result<JobDescription, JobCodecError> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(JobCodecError::FieldCount(fields.len()));
        }
        let bad = |field: &'static str, text: &str| JobCodecError::BadField {
            field,
            text: text.to_string(),
        };
        let cores = fields[1].parse().map_err(|_| bad("cores", fields[1]))?;
        let gpus = fields[2].parse().map_err(|_| bad("gpus", fields[2]))?;
        let node_span = match fields[3] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad("span", s))?),
        };
        let walltime_hint_s = match fields[4] {
            "-" => None,
            s => Some(s.parse().map_err(|_| bad("hint", s))?),
        };
        let body = match fields[5] {
            "-" => DurationSpec::Null,
            s => DurationSpec::Sleep(s.parse().map_err(|_| bad("body", s))?),
        };
        Ok(JobDescription {
            uid: fields[0].to_string(),
            cores,
            gpus,
            node_span,
            walltime_hint_s,
            body,
            payload: fields[6].to_string(),
        })
    }

    fn request(&self) -> ResourceRequest {
        ResourceRequest { cores: self.cores, gpus: self.gpus, node_span: self.node_span }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Queued,
    /// Cores held; RUNNING event pending in the launch pipeline.
    Launching,
    Running,
    Terminal,
}

struct JobState {
    sid: String,
    job: JobDescription,
    phase: Phase,
    assignment: Option<SlotAssignment>,
    /// Modeled completion time, known once launched and hinted.
    est_finish: Option<f64>,
}

pub struct HierarchicalBackend {
    common: InstanceCommon,
    cfg: HierConfig,
    slots: SlotMap,
    queue: VecDeque<String>,
    jobs: BTreeMap<String, JobState>,
    sid_to_uid: BTreeMap<String, String>,
}

impl HierarchicalBackend {
    pub fn new(id: String, partition: Partition, params: BackendParams, cfg: HierConfig) -> Self {
        let slots = SlotMap::for_partition(&partition);
        HierarchicalBackend {
            common: InstanceCommon::new(id, partition, params),
            cfg,
            slots,
            queue: VecDeque::new(),
            jobs: BTreeMap::new(),
            sid_to_uid: BTreeMap::new(),
        }
    }

    /// Completion seconds the scheduler books for a hinted body.
    fn effective_body(&self, hint: f64) -> f64 {
        effective(hint, self.cfg.zero_eps_s)
    }

    /// Acquire slots for `uid` and put its RUNNING event into the launch
    /// pipeline. The caller has already checked placement.
    fn launch(&mut self, uid: &str, now: f64, timers: &mut dyn TimerHost) {
        let req = self.jobs[uid].job.request();
        let assignment = self.slots.acquire(uid, &req).expect("checked placeable");
        let start = self.common.pipeline_slot(now, self.cfg.launch_latency_s);
        let job = self.jobs.get_mut(uid).expect("queued job is known");
        job.phase = Phase::Launching;
        job.assignment = Some(assignment);
        job.est_finish = job.job.walltime_hint_s.map(|h| start + effective(h, self.cfg.zero_eps_s));
        timers.schedule(start, BackendActionKind::LaunchFire { uid: uid.to_string() });
    }

    /// Earliest replayed-release time at which the queue head would fit, or
    /// None when an unhinted active job makes the bound unknowable.
    fn head_reservation(&self, head_req: &ResourceRequest) -> Option<f64> {
        let mut releases: Vec<(f64, String)> = Vec::new();
        for (uid, job) in &self.jobs {
            if matches!(job.phase, Phase::Launching | Phase::Running) {
                // Conservative: one opaque job and no sound bound exists.
                releases.push((job.est_finish?, uid.clone()));
            }
        }
        releases.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut ghost = self.slots.clone();
        for (t, uid) in releases {
            ghost.release(&uid).expect("active job holds slots");
            if ghost.can_place(head_req) {
                return Some(t);
            }
        }
        None
    }

    /// Launch hinted jobs behind the head that fit now and are booked to
    /// finish by the head's reservation, so the head cannot be delayed.
    fn backfill(&mut self, reservation: f64, now: f64, timers: &mut dyn TimerHost) {
        let candidates: Vec<String> = self.queue.iter().skip(1).cloned().collect();
        for uid in candidates {
            let job = &self.jobs[&uid];
            let Some(hint) = job.job.walltime_hint_s else { continue };
            let req = job.job.request();
            if !self.slots.can_place(&req) {
                continue;
            }
            let start = self.common.peek_pipeline_slot(now, self.cfg.launch_latency_s);
            if start + self.effective_body(hint) > reservation {
                continue;
            }
            self.queue.retain(|u| u != &uid);
            self.launch(&uid, now, timers);
        }
    }

    /// Run the queue: launch fitting heads in order, then try backfill once
    /// the head blocks.
    fn schedule_step(&mut self, now: f64, timers: &mut dyn TimerHost) {
        while let Some(uid) = self.queue.front().cloned() {
            let req = self.jobs[&uid].job.request();
            if self.slots.can_place(&req) {
                self.queue.pop_front();
                self.launch(&uid, now, timers);
                continue;
            }
            if self.cfg.policy == QueuePolicy::FcfsBackfill {
                if let Some(reservation) = self.head_reservation(&req) {
                    self.backfill(reservation, now, timers);
                }
            }
            break;
        }
    }

    fn release(&mut self, uid: &str) {
        let job = self.jobs.get_mut(uid).expect("known job");
        if job.assignment.take().is_some() {
            self.slots.release(uid).expect("held assignment");
        }
        job.phase = Phase::Terminal;
        job.est_finish = None;
    }

    fn push_capacity_freed(&mut self, now: f64) {
        self.common.push_event(BackendEvent {
            ts: now,
            kind: BackendEventKind::CapacityFreed,
            uid: None,
            detail: None,
        });
    }

    /// Queue-level entry point; the task-level `submit` wraps this.
    pub fn submit_job(
        &mut self,
        job: JobDescription,
        now: f64,
        timers: &mut dyn TimerHost,
    ) -> Result<String, SubmitError> {
        self.common.ensure_ready()?;
        if self.jobs.contains_key(&job.uid) {
            return Err(SubmitError::DuplicateSubmission);
        }
        if !self.slots.fits_capacity(&job.request()) {
            return Err(SubmitError::Rejected);
        }
        let sid = self.common.next_submission_id();
        self.sid_to_uid.insert(sid.clone(), job.uid.clone());
        self.jobs.insert(
            job.uid.clone(),
            JobState { sid: sid.clone(), job, phase: Phase::Queued, assignment: None, est_finish: None },
        );
        let uid = self.sid_to_uid[&sid].clone();
        self.queue.push_back(uid);
        self.schedule_step(now, timers);
        Ok(sid)
    }
}

/// Booked completion seconds for a hinted body (free function so `launch`
/// can use it while `self` is partially borrowed).
fn effective(hint: f64, zero_eps_s: f64) -> f64 {
    if hint > 0.0 {
        hint
    } else {
        zero_eps_s
    }
}

impl Backend for HierarchicalBackend {
    fn id(&self) -> &str {
        &self.common.id
    }

    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::for_family(BackendFamily::Hierarchical)
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
        self.jobs.values().filter(|j| j.phase != Phase::Terminal).count()
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
        if desc.modality != Modality::Executable {
            return Err(SubmitError::UnsupportedModality);
        }
        self.submit_job(JobDescription::from_task(desc), now, timers)
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
        let phase = self.jobs[&uid].phase;
        match phase {
            Phase::Terminal => return Err(CancelError::AlreadyTerminal(submission_id.to_string())),
            Phase::Queued => {
                self.queue.retain(|u| u != &uid);
                self.jobs.get_mut(&uid).expect("known").phase = Phase::Terminal;
                self.common.push_task_event(now, BackendEventKind::TaskCanceled, &uid, None);
            }
            Phase::Launching | Phase::Running => {
                self.release(&uid);
                self.common.push_task_event(now, BackendEventKind::TaskCanceled, &uid, None);
                self.push_capacity_freed(now);
                self.schedule_step(now, timers);
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
                let Some(job) = self.jobs.get_mut(&uid) else { return };
                if job.phase != Phase::Launching {
                    return;
                }
                job.phase = Phase::Running;
                let body = job.job.body.seconds();
                let sid = job.sid.clone();
                self.common
                    .push_task_event(now, BackendEventKind::TaskRunning, &uid, Some(format!("job={sid}")));
                let end = now + if body > 0.0 { body } else { self.cfg.zero_eps_s };
                timers.schedule(end, BackendActionKind::Complete { uid });
            }
            BackendActionKind::Complete { uid } => {
                let Some(job) = self.jobs.get(&uid) else { return };
                if job.phase != Phase::Running {
                    return;
                }
                self.release(&uid);
                self.common.push_task_event(now, BackendEventKind::TaskDone, &uid, None);
                self.push_capacity_freed(now);
                self.schedule_step(now, timers);
            }
        }
    }

    fn poll_events(&mut self, up_to: f64) -> Vec<BackendEvent> {
        self.common.poll_events(up_to)
    }

    fn inject_failure(&mut self, now: f64, cause: &str) {
        let uids: Vec<String> = self
            .jobs
            .iter()
            .filter(|(_, j)| j.phase != Phase::Terminal)
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
        for (uid, job) in &self.jobs {
            let holds = job.assignment.is_some();
            let should = matches!(job.phase, Phase::Launching | Phase::Running);
            if holds != should {
                return Err(format!("{}: job {uid} phase/assignment mismatch", self.common.id));
            }
        }
        for uid in &self.queue {
            if self.jobs[uid].phase != Phase::Queued {
                return Err(format!("{}: queued job {uid} not in Queued phase", self.common.id));
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

    type Rig = GenericRig<HierarchicalBackend>;

    fn rig(nodes: u32, cfg: HierConfig) -> Rig {
        let alloc = Allocation::new(nodes, NodeSpec::default());
        let part = partition_allocation(&alloc, 1).unwrap().remove(0);
        let params = BackendParams { bootstrap_s: 0.0, startup_timeout_s: 60.0 };
        Rig::new(HierarchicalBackend::new("hier-0".into(), part, params, cfg))
    }

    fn job(uid: &str, cores: u32, body_s: f64) -> JobDescription {
        JobDescription {
            uid: uid.to_string(),
            cores,
            gpus: 0,
            node_span: None,
            walltime_hint_s: Some(body_s),
            body: DurationSpec::Sleep(body_s),
            payload: format!("sleep {body_s}"),
        }
    }

    fn starts(rig: &mut Rig) -> Vec<(f64, String)> {
        rig.events()
            .into_iter()
            .filter(|e| e.kind == BackendEventKind::TaskRunning)
            .map(|e| (e.ts, e.uid.unwrap()))
            .collect()
    }

    #[test]
    fn job_line_round_trips_losslessly() {
        let cases = vec![
            job("j0", 56, 0.1 + 0.2),
            JobDescription {
                uid: "weird uid with spaces".into(),
                cores: 7168,
                gpus: 1024,
                node_span: Some(128),
                walltime_hint_s: None,
                body: DurationSpec::Null,
                payload: "/bin/true --flag value".into(),
            },
            JobDescription {
                uid: "j2".into(),
                cores: 1,
                gpus: 0,
                node_span: None,
                walltime_hint_s: Some(1e-9),
                body: DurationSpec::Sleep(f64::MIN_POSITIVE),
                payload: "noop".into(),
            },
        ];
        for j in cases {
            let line = j.to_line();
            assert_eq!(JobDescription::parse_line(&line).unwrap(), j, "line: {line}");
        }
        assert!(matches!(
            JobDescription::parse_line("too\tfew"),
            Err(JobCodecError::FieldCount(2))
        ));
        assert!(matches!(
            JobDescription::parse_line("u\tx\t0\t-\t-\t-\tp"),
            Err(JobCodecError::BadField { field: "cores", .. })
        ));
    }

    #[test]
    fn fcfs_blocked_head_blocks_small_followers() {
        let cfg = HierConfig { policy: QueuePolicy::Fcfs, launch_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        rig.backend.submit_job(job("big0", 56, 100.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("big1", 56, 100.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("small", 1, 1.0), 0.0, &mut rig.clock).unwrap();
        rig.drain();
        let order: Vec<String> = starts(&mut rig).into_iter().map(|(_, u)| u).collect();
        assert_eq!(order, vec!["big0", "big1", "small"]);
    }

    #[test]
    fn backfill_fills_gap_without_delaying_head() {
        // Node of 56: A holds all cores for 100 s. Head H wants all 112
        // cores of 2 nodes; B (short) backfills, C (too long) must wait.
        let cfg = HierConfig { launch_latency_s: 0.01, ..Default::default() };
        let mut rig = rig(2, cfg);
        rig.backend.submit_job(job("a", 56, 100.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("h", 112, 30.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("b", 56, 50.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("c", 56, 200.0), 0.0, &mut rig.clock).unwrap();
        rig.drain();
        let got = starts(&mut rig);
        let order: Vec<&str> = got.iter().map(|(_, u)| u.as_str()).collect();
        assert_eq!(order, vec!["a", "b", "h", "c"]);
        let h_start = got[2].0;
        // Head launches right when A's replayed release predicted: 100.01
        // (A's start) + 100 (hint) + 0.01 launch. Backfilled B cannot move it.
        assert!((h_start - 100.02).abs() < 1e-9, "h started at {h_start}");
        rig.backend.audit().unwrap();
    }

    #[test]
    fn unhinted_active_job_disables_backfill() {
        let cfg = HierConfig { launch_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        let mut opaque = job("opaque", 55, 100.0);
        opaque.walltime_hint_s = None;
        rig.backend.submit_job(opaque, 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("head", 56, 10.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("tiny", 1, 0.5), 0.0, &mut rig.clock).unwrap();
        rig.drain();
        let got = starts(&mut rig);
        let order: Vec<&str> = got.iter().map(|(_, u)| u.as_str()).collect();
        // tiny fits in the spare core right away, but with no reservation it
        // must wait for the head.
        assert_eq!(order, vec!["opaque", "head", "tiny"]);
        assert_eq!(got[2].0, 110.0);
    }

    #[test]
    fn unhinted_candidate_is_skipped_by_backfill() {
        let cfg = HierConfig { launch_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        rig.backend.submit_job(job("a", 55, 100.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("head", 56, 10.0), 0.0, &mut rig.clock).unwrap();
        let mut blind = job("blind", 1, 0.5);
        blind.walltime_hint_s = None;
        rig.backend.submit_job(blind, 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("sighted", 1, 0.5), 0.0, &mut rig.clock).unwrap();
        rig.drain();
        let order: Vec<String> = starts(&mut rig).into_iter().map(|(_, u)| u).collect();
        assert_eq!(order, vec!["a", "sighted", "head", "blind"]);
    }

    #[test]
    fn saturation_wave_drain_extends_over_cap_free_waves() {
        // 896 x 180 s single-core tasks on 4 nodes (224 cores): 4 waves of
        // 224, no launch cap. Last completion at 4*180 plus pipeline skew.
        let cfg = HierConfig { launch_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(4, cfg);
        for i in 0..896 {
            rig.backend
                .submit_job(job(&format!("t{i:04}"), 1, 180.0), 0.0, &mut rig.clock)
                .unwrap();
        }
        rig.drain();
        assert_eq!(rig.clock.now(), 720.0);
        rig.backend.audit().unwrap();
    }

    #[test]
    fn cancel_running_reopens_slots_for_queue() {
        let cfg = HierConfig { launch_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        let sid_a = rig.backend.submit_job(job("a", 56, 1000.0), 0.0, &mut rig.clock).unwrap();
        rig.backend.submit_job(job("b", 56, 10.0), 0.0, &mut rig.clock).unwrap();
        rig.step(); // a launches
        rig.backend.cancel(&sid_a, 5.0, &mut rig.clock).unwrap();
        rig.drain();
        let got = starts(&mut rig);
        assert_eq!(got.len(), 2);
        assert_eq!(got[1].1, "b");
        assert_eq!(got[1].0, 5.0);
        rig.backend.audit().unwrap();
    }

    #[test]
    fn failure_mid_run_fails_running_and_queued() {
        let cfg = HierConfig { launch_latency_s: 0.0, ..Default::default() };
        let mut rig = rig(1, cfg);
        // 56 running 1000 s bodies plus 50 queued behind them.
        for i in 0..106 {
            rig.backend
                .submit_job(job(&format!("t{i:03}"), 1, 1000.0), 0.0, &mut rig.clock)
                .unwrap();
        }
        rig.step(); // launches fire
        rig.backend.inject_failure(100.0, "node down");
        let events = rig.events();
        let failed = events.iter().filter(|e| e.kind == BackendEventKind::TaskFailed).count();
        assert_eq!(failed, 106);
        assert_eq!(rig.backend.lifecycle(), InstanceState::InstanceFailed);
        assert_eq!(rig.backend.free_cores(), 56);
        rig.drain();
        assert!(rig.events().is_empty());
        rig.backend.audit().unwrap();
    }

    #[test]
    fn task_level_submit_maps_modality_and_capacity() {
        let mut rig = rig(1, HierConfig::default());
        let func = TaskDescription::simple("f", Modality::Function, DurationSpec::Null);
        assert_eq!(rig.submit(&func).unwrap_err(), SubmitError::UnsupportedModality);
        let mut wide = TaskDescription::simple("w", Modality::Executable, DurationSpec::Sleep(1.0));
        wide.cores = 57;
        wide.node_span = Some(1);
        assert_eq!(rig.submit(&wide).unwrap_err(), SubmitError::Rejected);
        let ok = TaskDescription::simple("ok", Modality::Executable, DurationSpec::Null);
        let sid = rig.submit(&ok).unwrap();
        assert_eq!(rig.submit(&ok).unwrap_err(), SubmitError::DuplicateSubmission);
        rig.drain();
        let done: Vec<f64> = rig
            .events()
            .iter()
            .filter(|e| e.kind == BackendEventKind::TaskDone)
            .map(|e| e.ts)
            .collect();
        assert_eq!(done.len(), 1);
        assert!((done[0] - 0.011).abs() < 1e-12, "null body ends at launch + eps");
        assert!(matches!(
            rig.backend.cancel(&sid, rig.clock.now(), &mut rig.clock),
            Err(CancelError::AlreadyTerminal(_))
        ));
    }
}
