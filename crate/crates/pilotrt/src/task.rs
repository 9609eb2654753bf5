//! Task model: descriptions, the seven-state lifecycle, the append-only event
//! log, and the log validator used by both the harness and the CLI.
//!
//! The event log is the single source of truth for analytics. State lives in
//! the registry only as a convenience; every transition is recorded as an
//! event before the in-memory state changes.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// How a task body executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    /// One OS process per task (real mode) or a process model (sim).
    Executable,
    /// Dispatched to a persistent worker; no per-task process.
    Function,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Executable => write!(f, "exec"),
            Modality::Function => write!(f, "func"),
        }
    }
}

/// Requested task body runtime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationSpec {
    /// No application work; returns immediately.
    Null,
    /// Busy for the given number of seconds.
    Sleep(f64),
}

impl DurationSpec {
    /// Modeled runtime in seconds (zero for null bodies).
    pub fn seconds(&self) -> f64 {
        match self {
            DurationSpec::Null => 0.0,
            DurationSpec::Sleep(s) => *s,
        }
    }
}

/// Immutable task request.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDescription {
    pub uid: String,
    pub modality: Modality,
    pub cores: u32,
    pub gpus: u32,
    pub duration: DurationSpec,
    /// Executable command line, or function call spec (`name` or `name args`).
    pub payload: String,
    /// Spread the task over exactly this many nodes when set.
    pub node_span: Option<u32>,
}

impl TaskDescription {
    /// Single-core CPU task with the given body; the common case.
    pub fn simple(uid: impl Into<String>, modality: Modality, duration: DurationSpec) -> Self {
        let duration_payload = match duration {
            DurationSpec::Null => match modality {
                Modality::Executable => "true".to_string(),
                Modality::Function => "noop".to_string(),
            },
            DurationSpec::Sleep(s) => format!("sleep {s}"),
        };
        TaskDescription {
            uid: uid.into(),
            modality,
            cores: 1,
            gpus: 0,
            duration,
            payload: duration_payload,
            node_span: None,
        }
    }

    /// Seconds the task body is expected to run; used as the scheduling hint.
    pub fn duration_hint(&self) -> f64 {
        self.duration.seconds()
    }
}

/// Task lifecycle states. Terminal states are absorbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskState {
    New,
    Scheduled,
    Submitted,
    Running,
    Done,
    Failed,
    Canceled,
}

impl TaskState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, TaskState::Done | TaskState::Failed | TaskState::Canceled)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskState::New => "NEW",
            TaskState::Scheduled => "SCHEDULED",
            TaskState::Submitted => "SUBMITTED",
            TaskState::Running => "RUNNING",
            TaskState::Done => "DONE",
            TaskState::Failed => "FAILED",
            TaskState::Canceled => "CANCELED",
        }
    }

    pub fn parse(s: &str) -> Option<TaskState> {
        Some(match s {
            "NEW" => TaskState::New,
            "SCHEDULED" => TaskState::Scheduled,
            "SUBMITTED" => TaskState::Submitted,
            "RUNNING" => TaskState::Running,
            "DONE" => TaskState::Done,
            "FAILED" => TaskState::Failed,
            "CANCELED" => TaskState::Canceled,
            _ => return None,
        })
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Legal state moves: the forward chain NEW -> SCHEDULED -> SUBMITTED ->
/// RUNNING -> DONE, with FAILED and CANCELED reachable from any non-terminal
/// state. Everything else is rejected.
pub fn transition_is_legal(from: TaskState, to: TaskState) -> bool {
    use TaskState::*;
    if from.is_terminal() {
        return false;
    }
    match to {
        Scheduled => from == New,
        Submitted => from == Scheduled,
        Running => from == Submitted,
        Done => from == Running,
        Failed | Canceled => true,
        New => false,
    }
}

/// Backend instance lifecycle, recorded in the same log as task events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceState {
    Booting,
    Ready,
    InstanceFailed,
    Stopped,
}

impl InstanceState {
    pub fn name(&self) -> &'static str {
        match self {
            InstanceState::Booting => "BOOTING",
            InstanceState::Ready => "READY",
            InstanceState::InstanceFailed => "INSTANCE_FAILED",
            InstanceState::Stopped => "STOPPED",
        }
    }

    pub fn parse(s: &str) -> Option<InstanceState> {
        Some(match s {
            "BOOTING" => InstanceState::Booting,
            "READY" => InstanceState::Ready,
            "INSTANCE_FAILED" => InstanceState::InstanceFailed,
            "STOPPED" => InstanceState::Stopped,
            _ => return None,
        })
    }
}

/// What a log line describes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RecordState {
    Task(TaskState),
    Instance(InstanceState),
}

impl RecordState {
    pub fn name(&self) -> &'static str {
        match self {
            RecordState::Task(s) => s.name(),
            RecordState::Instance(s) => s.name(),
        }
    }
}

/// One line of the event log: `ts uid state partition backend detail`,
/// tab-separated, `-` for absent optional fields.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub ts: f64,
    pub uid: String,
    pub state: RecordState,
    pub partition: Option<u32>,
    pub backend: Option<String>,
    pub detail: Option<String>,
}

/// File header identifying the log schema.
pub const EVENT_LOG_HEADER: &str = "#pilotrt-events v1";

fn opt_field(s: &Option<String>) -> &str {
    s.as_deref().unwrap_or("-")
}

impl LogRecord {
    pub fn task(
        ts: f64,
        uid: impl Into<String>,
        state: TaskState,
        partition: Option<u32>,
        backend: Option<String>,
        detail: Option<String>,
    ) -> Self {
        LogRecord { ts, uid: uid.into(), state: RecordState::Task(state), partition, backend, detail }
    }

    pub fn instance(
        ts: f64,
        id: impl Into<String>,
        state: InstanceState,
        partition: Option<u32>,
        detail: Option<String>,
    ) -> Self {
        let id = id.into();
        LogRecord {
            ts,
            uid: id.clone(),
            state: RecordState::Instance(state),
            partition,
            backend: Some(id),
            detail,
        }
    }

    pub fn task_state(&self) -> Option<TaskState> {
        match self.state {
            RecordState::Task(s) => Some(s),
            RecordState::Instance(_) => None,
        }
    }

    pub fn to_line(&self) -> String {
        let part = self.partition.map(|p| p.to_string());
        format!(
            "{:.6}\t{}\t{}\t{}\t{}\t{}",
            self.ts,
            self.uid,
            self.state.name(),
            part.as_deref().unwrap_or("-"),
            opt_field(&self.backend),
            opt_field(&self.detail),
        )
    }

    pub fn parse_line(line: &str) -> Result<LogRecord, LogParseError> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(LogParseError::FieldCount { found: fields.len() });
        }
        let ts: f64 = fields[0]
            .parse()
            .map_err(|_| LogParseError::BadTimestamp(fields[0].to_string()))?;
        let state = if let Some(s) = TaskState::parse(fields[2]) {
            RecordState::Task(s)
        } else if let Some(s) = InstanceState::parse(fields[2]) {
            RecordState::Instance(s)
        } else {
            return Err(LogParseError::BadState(fields[2].to_string()));
        };
        let partition = match fields[3] {
            "-" => None,
            p => Some(p.parse().map_err(|_| LogParseError::BadPartition(p.to_string()))?),
        };
        let opt = |s: &str| if s == "-" { None } else { Some(s.to_string()) };
        Ok(LogRecord {
            ts,
            uid: fields[1].to_string(),
            state,
            partition,
            backend: opt(fields[4]),
            detail: opt(fields[5]),
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LogParseError {
    #[error("expected 6 tab-separated fields, found {found}")]
    FieldCount { found: usize },
    #[error("bad timestamp `{0}`")]
    BadTimestamp(String),
    #[error("unknown state `{0}`")]
    BadState(String),
    #[error("bad partition id `{0}`")]
    BadPartition(String),
}

/// Serialize a full log, header first.
pub fn serialize_log(records: &[LogRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 48 + 24);
    out.push_str(EVENT_LOG_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Parse a serialized log; `#` lines are comments, the header is optional so
/// hand-written fixtures stay cheap to produce.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>, LogParseError> {
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(LogRecord::parse_line)
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("task `{0}` requests zero cores")]
    ZeroCores(String),
    #[error("task `{0}` has a negative duration")]
    NegativeDuration(String),
    #[error("uid `{0}` already registered")]
    DuplicateUid(String),
    #[error("task `{uid}` calls unknown function `{name}`")]
    UnknownFunctionName { uid: String, name: String },
}

/// Function names a worker knows how to run in-process.
pub const REGISTERED_FUNCTIONS: [&str; 3] = ["noop", "sleep", "fail"];

/// Structural checks on a description, independent of any registry.
pub fn check_description(desc: &TaskDescription) -> Result<(), ValidationError> {
    if desc.cores == 0 {
        return Err(ValidationError::ZeroCores(desc.uid.clone()));
    }
    if let DurationSpec::Sleep(s) = desc.duration {
        if s < 0.0 || !s.is_finite() {
            return Err(ValidationError::NegativeDuration(desc.uid.clone()));
        }
    }
    if desc.modality == Modality::Function {
        let name = desc.payload.split_whitespace().next().unwrap_or("");
        if !REGISTERED_FUNCTIONS.contains(&name) {
            return Err(ValidationError::UnknownFunctionName {
                uid: desc.uid.clone(),
                name: name.to_string(),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Error, PartialEq)]
pub enum TransitionError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("illegal transition {from} -> {to} for task `{uid}`")]
    Illegal { uid: String, from: TaskState, to: TaskState },
    #[error("timestamp regression for task `{uid}`: {prev:.6} -> {next:.6}")]
    TimestampRegression { uid: String, prev: f64, next: f64 },
}

/// Live task: description plus mutable runtime bookkeeping.
#[derive(Debug, Clone)]
pub struct Task {
    pub desc: TaskDescription,
    pub state: TaskState,
    pub last_event_ts: f64,
    /// Times this task has been re-routed after an instance failure.
    pub reroutes: u32,
}

/// Owns every admitted task and the append-only event log.
///
/// One writer sequence per task: transitions for distinct tasks may come from
/// different callers, but each call is atomic (validate, append event, update
/// state) and the log keeps insertion order as its tie-break sequence.
#[derive(Debug, Default)]
pub struct Registry {
    tasks: BTreeMap<String, Task>,
    log: Vec<LogRecord>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    /// Validate and admit a description; records the NEW event.
    pub fn admit(&mut self, desc: TaskDescription, now: f64) -> Result<&Task, ValidationError> {
        check_description(&desc)?;
        if self.tasks.contains_key(&desc.uid) {
            return Err(ValidationError::DuplicateUid(desc.uid));
        }
        let uid = desc.uid.clone();
        // Shape rides along so the log alone supports busy-core analytics.
        let shape = format!("cores={} gpus={}", desc.cores, desc.gpus);
        self.log.push(LogRecord::task(now, &uid, TaskState::New, None, None, Some(shape)));
        self.tasks.insert(
            uid.clone(),
            Task { desc, state: TaskState::New, last_event_ts: now, reroutes: 0 },
        );
        Ok(&self.tasks[&uid])
    }

    /// Atomic state move; appends the event and returns a copy of it.
    pub fn transition(
        &mut self,
        uid: &str,
        to: TaskState,
        ts: f64,
        partition: Option<u32>,
        backend: Option<String>,
        detail: Option<String>,
    ) -> Result<LogRecord, TransitionError> {
        let task = self
            .tasks
            .get_mut(uid)
            .ok_or_else(|| TransitionError::UnknownTask(uid.to_string()))?;
        if !transition_is_legal(task.state, to) {
            return Err(TransitionError::Illegal { uid: uid.to_string(), from: task.state, to });
        }
        if ts < task.last_event_ts {
            return Err(TransitionError::TimestampRegression {
                uid: uid.to_string(),
                prev: task.last_event_ts,
                next: ts,
            });
        }
        let rec = LogRecord::task(ts, uid, to, partition, backend, detail);
        self.log.push(rec.clone());
        task.state = to;
        task.last_event_ts = ts;
        Ok(rec)
    }

    /// Instance lifecycle records share the log so analytics sees one stream.
    pub fn record_instance(
        &mut self,
        ts: f64,
        id: &str,
        state: InstanceState,
        partition: Option<u32>,
        detail: Option<String>,
    ) {
        self.log.push(LogRecord::instance(ts, id, state, partition, detail));
    }

    pub fn task(&self, uid: &str) -> Option<&Task> {
        self.tasks.get(uid)
    }

    pub fn task_mut(&mut self, uid: &str) -> Option<&mut Task> {
        self.tasks.get_mut(uid)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.values()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn all_terminal(&self) -> bool {
        self.tasks.values().all(|t| t.state.is_terminal())
    }

    pub fn non_terminal_uids(&self) -> Vec<&str> {
        self.tasks
            .values()
            .filter(|t| !t.state.is_terminal())
            .map(|t| t.desc.uid.as_str())
            .collect()
    }
}

/// One problem found by [`validate_log`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    IllegalTransition { uid: String, from: TaskState, to: TaskState, ts: f64 },
    TimestampRegression { uid: String, prev: f64, next: f64 },
    MissingTerminal { uid: String, last: TaskState },
    MissingContext { uid: String, ts: f64 },
    GlobalOrderRegression { index: usize, prev: f64, next: f64 },
    InstanceOrder { id: String, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IllegalTransition { uid, from, to, ts } => {
                write!(f, "{uid}: illegal {from} -> {to} at {ts:.6}")
            }
            Violation::TimestampRegression { uid, prev, next } => {
                write!(f, "{uid}: timestamp regression {prev:.6} -> {next:.6}")
            }
            Violation::MissingTerminal { uid, last } => {
                write!(f, "{uid}: no terminal state (last {last})")
            }
            Violation::MissingContext { uid, ts } => {
                write!(f, "{uid}: RUNNING at {ts:.6} lacks partition or backend id")
            }
            Violation::GlobalOrderRegression { index, prev, next } => {
                write!(f, "line {index}: global timestamp order broken {prev:.6} -> {next:.6}")
            }
            Violation::InstanceOrder { id, detail } => write!(f, "{id}: {detail}"),
        }
    }
}

/// Check a complete run log: per-task legal chains starting at NEW and ending
/// terminal, non-decreasing timestamps (per task and globally), RUNNING
/// records carrying partition and backend ids, and sane instance lifecycles.
/// Empty result means the log is legal.
pub fn validate_log(records: &[LogRecord]) -> Vec<Violation> {
    let mut violations = Vec::new();

    for (i, w) in records.windows(2).enumerate() {
        if w[1].ts < w[0].ts {
            violations.push(Violation::GlobalOrderRegression {
                index: i + 1,
                prev: w[0].ts,
                next: w[1].ts,
            });
        }
    }

    let mut chains: BTreeMap<&str, Vec<&LogRecord>> = BTreeMap::new();
    let mut instances: BTreeMap<&str, Vec<InstanceState>> = BTreeMap::new();
    for rec in records {
        match rec.state {
            RecordState::Task(_) => chains.entry(&rec.uid).or_default().push(rec),
            RecordState::Instance(s) => instances.entry(&rec.uid).or_default().push(s),
        }
    }

    for (uid, chain) in &chains {
        let mut prev_state: Option<TaskState> = None;
        let mut prev_ts = f64::NEG_INFINITY;
        for rec in chain {
            let state = rec.task_state().expect("task chain holds task records");
            match prev_state {
                None => {
                    if state != TaskState::New {
                        violations.push(Violation::IllegalTransition {
                            uid: uid.to_string(),
                            from: state,
                            to: state,
                            ts: rec.ts,
                        });
                    }
                }
                Some(from) => {
                    if !transition_is_legal(from, state) {
                        violations.push(Violation::IllegalTransition {
                            uid: uid.to_string(),
                            from,
                            to: state,
                            ts: rec.ts,
                        });
                    }
                }
            }
            if rec.ts < prev_ts {
                violations.push(Violation::TimestampRegression {
                    uid: uid.to_string(),
                    prev: prev_ts,
                    next: rec.ts,
                });
            }
            if state == TaskState::Running && (rec.partition.is_none() || rec.backend.is_none()) {
                violations.push(Violation::MissingContext { uid: uid.to_string(), ts: rec.ts });
            }
            prev_state = Some(state);
            prev_ts = rec.ts;
        }
        if let Some(last) = prev_state {
            if !last.is_terminal() {
                violations.push(Violation::MissingTerminal { uid: uid.to_string(), last });
            }
        }
    }

    for (id, states) in &instances {
        if states.first() != Some(&InstanceState::Booting) {
            violations.push(Violation::InstanceOrder {
                id: id.to_string(),
                detail: "lifecycle does not start with BOOTING".to_string(),
            });
        }
        let readies = states.iter().filter(|s| **s == InstanceState::Ready).count();
        if readies > 1 {
            violations.push(Violation::InstanceOrder {
                id: id.to_string(),
                detail: format!("{readies} READY records"),
            });
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(uid: &str) -> TaskDescription {
        TaskDescription::simple(uid, Modality::Executable, DurationSpec::Sleep(1.0))
    }

    #[test]
    fn forward_chain_is_legal() {
        use TaskState::*;
        let chain = [New, Scheduled, Submitted, Running, Done];
        for w in chain.windows(2) {
            assert!(transition_is_legal(w[0], w[1]), "{:?} -> {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn terminal_states_absorb() {
        use TaskState::*;
        for terminal in [Done, Failed, Canceled] {
            for to in [New, Scheduled, Submitted, Running, Done, Failed, Canceled] {
                assert!(!transition_is_legal(terminal, to));
            }
        }
    }

    #[test]
    fn cancel_and_fail_from_any_non_terminal() {
        use TaskState::*;
        for from in [New, Scheduled, Submitted, Running] {
            assert!(transition_is_legal(from, Canceled));
            assert!(transition_is_legal(from, Failed));
        }
    }

    #[test]
    fn skipping_states_is_illegal() {
        use TaskState::*;
        assert!(!transition_is_legal(New, Submitted));
        assert!(!transition_is_legal(New, Running));
        assert!(!transition_is_legal(Scheduled, Running));
        assert!(!transition_is_legal(Submitted, Done));
        assert!(!transition_is_legal(Running, Running));
    }

    #[test]
    fn admit_records_new_event() {
        let mut reg = Registry::new();
        let t = reg.admit(desc("t1"), 0.0).unwrap();
        assert_eq!(t.state, TaskState::New);
        assert_eq!(reg.log().len(), 1);
        assert_eq!(reg.log()[0].task_state(), Some(TaskState::New));
    }

    #[test]
    fn admit_rejects_duplicates_zero_cores_and_bad_functions() {
        let mut reg = Registry::new();
        reg.admit(desc("t1"), 0.0).unwrap();
        assert_eq!(
            reg.admit(desc("t1"), 0.0).unwrap_err(),
            ValidationError::DuplicateUid("t1".into())
        );

        let mut zero = desc("t2");
        zero.cores = 0;
        assert_eq!(reg.admit(zero, 0.0).unwrap_err(), ValidationError::ZeroCores("t2".into()));

        let mut neg = desc("t3");
        neg.duration = DurationSpec::Sleep(-1.0);
        assert_eq!(
            reg.admit(neg, 0.0).unwrap_err(),
            ValidationError::NegativeDuration("t3".into())
        );

        let mut bad = TaskDescription::simple("t4", Modality::Function, DurationSpec::Null);
        bad.payload = "frobnicate 7".into();
        assert!(matches!(
            reg.admit(bad, 0.0),
            Err(ValidationError::UnknownFunctionName { .. })
        ));
    }

    #[test]
    fn transition_enforces_legality_and_time() {
        let mut reg = Registry::new();
        reg.admit(desc("t1"), 0.0).unwrap();
        reg.transition("t1", TaskState::Scheduled, 1.0, None, None, None).unwrap();
        let err = reg.transition("t1", TaskState::Running, 2.0, None, None, None).unwrap_err();
        assert!(matches!(err, TransitionError::Illegal { .. }));
        let err = reg.transition("t1", TaskState::Submitted, 0.5, None, None, None).unwrap_err();
        assert!(matches!(err, TransitionError::TimestampRegression { .. }));
        assert!(matches!(
            reg.transition("nope", TaskState::Scheduled, 0.0, None, None, None),
            Err(TransitionError::UnknownTask(_))
        ));
    }

    #[test]
    fn double_completion_is_rejected() {
        let mut reg = Registry::new();
        reg.admit(desc("t1"), 0.0).unwrap();
        for (s, ts) in [
            (TaskState::Scheduled, 0.0),
            (TaskState::Submitted, 0.1),
            (TaskState::Running, 0.2),
            (TaskState::Done, 1.2),
        ] {
            reg.transition("t1", s, ts, Some(0), Some("b0".into()), None).unwrap();
        }
        assert!(matches!(
            reg.transition("t1", TaskState::Done, 1.3, None, None, None),
            Err(TransitionError::Illegal { .. })
        ));
        // A late cancel must not override DONE either.
        assert!(matches!(
            reg.transition("t1", TaskState::Canceled, 1.4, None, None, None),
            Err(TransitionError::Illegal { .. })
        ));
    }

    #[test]
    fn log_line_round_trip() {
        let rec = LogRecord::task(
            12.345678,
            "t9",
            TaskState::Running,
            Some(3),
            Some("hier-0".into()),
            Some("sub=hier-0:4".into()),
        );
        let line = rec.to_line();
        assert_eq!(line, "12.345678\tt9\tRUNNING\t3\thier-0\tsub=hier-0:4");
        assert_eq!(LogRecord::parse_line(&line).unwrap(), rec);

        let inst = LogRecord::instance(0.0, "pool-1", InstanceState::Booting, Some(1), None);
        let parsed = LogRecord::parse_line(&inst.to_line()).unwrap();
        assert_eq!(parsed, inst);
    }

    #[test]
    fn serialize_emits_header_and_parse_skips_it() {
        let recs = vec![LogRecord::task(0.0, "a", TaskState::New, None, None, None)];
        let text = serialize_log(&recs);
        assert!(text.starts_with(EVENT_LOG_HEADER));
        assert_eq!(parse_log(&text).unwrap(), recs);
    }

    #[test]
    fn parse_rejects_malformed_lines() {
        assert!(matches!(
            LogRecord::parse_line("1.0\tuid\tRUNNING"),
            Err(LogParseError::FieldCount { found: 3 })
        ));
        assert!(matches!(
            LogRecord::parse_line("x\tuid\tRUNNING\t-\t-\t-"),
            Err(LogParseError::BadTimestamp(_))
        ));
        assert!(matches!(
            LogRecord::parse_line("1.0\tuid\tSPINNING\t-\t-\t-"),
            Err(LogParseError::BadState(_))
        ));
    }

    fn full_chain(uid: &str, start: f64) -> Vec<LogRecord> {
        vec![
            LogRecord::task(start, uid, TaskState::New, None, None, None),
            LogRecord::task(start, uid, TaskState::Scheduled, None, None, None),
            LogRecord::task(start + 0.1, uid, TaskState::Submitted, Some(0), Some("b".into()), None),
            LogRecord::task(start + 0.2, uid, TaskState::Running, Some(0), Some("b".into()), None),
            LogRecord::task(start + 1.2, uid, TaskState::Done, Some(0), Some("b".into()), None),
        ]
    }

    #[test]
    fn validator_accepts_legal_log() {
        let mut recs = full_chain("t1", 0.0);
        recs.extend(full_chain("t2", 0.05));
        recs.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        assert!(validate_log(&recs).is_empty());
    }

    #[test]
    fn validator_flags_skipped_state_and_missing_terminal() {
        let recs = vec![
            LogRecord::task(0.0, "t1", TaskState::New, None, None, None),
            LogRecord::task(0.1, "t1", TaskState::Running, Some(0), Some("b".into()), None),
        ];
        let v = validate_log(&recs);
        assert!(v.iter().any(|x| matches!(x, Violation::IllegalTransition { .. })));
        assert!(v.iter().any(|x| matches!(x, Violation::MissingTerminal { .. })));
    }

    #[test]
    fn validator_flags_running_without_context() {
        let mut recs = full_chain("t1", 0.0);
        recs[3].partition = None;
        let v = validate_log(&recs);
        assert!(v.iter().any(|x| matches!(x, Violation::MissingContext { .. })));
    }

    #[test]
    fn validator_flags_timestamp_regression() {
        let mut recs = full_chain("t1", 0.0);
        recs[4].ts = 0.05; // DONE before RUNNING
        let v = validate_log(&recs);
        assert!(v.iter().any(|x| matches!(x, Violation::TimestampRegression { .. })));
    }

    #[test]
    fn validator_checks_instance_lifecycles() {
        let recs = vec![LogRecord::instance(1.0, "b0", InstanceState::Ready, Some(0), None)];
        let v = validate_log(&recs);
        assert!(v.iter().any(|x| matches!(x, Violation::InstanceOrder { .. })));
    }

    #[test]
    fn canceled_after_running_is_legal() {
        let recs = vec![
            LogRecord::task(0.0, "t1", TaskState::New, None, None, None),
            LogRecord::task(0.0, "t1", TaskState::Scheduled, None, None, None),
            LogRecord::task(0.1, "t1", TaskState::Submitted, Some(0), Some("b".into()), None),
            LogRecord::task(0.2, "t1", TaskState::Running, Some(0), Some("b".into()), None),
            LogRecord::task(0.5, "t1", TaskState::Canceled, Some(0), Some("b".into()), None),
        ];
        assert!(validate_log(&recs).is_empty());
    }
}
