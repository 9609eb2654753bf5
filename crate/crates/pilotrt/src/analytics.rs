//! Metrics over the event log. Every function here reads only `LogRecord`
//! streams, never live runtime state, so the same numbers come out of a file
//! on disk as out of a finished run.
//!
//! Conventions: task activity spans are half-open `[start, end)`; throughput
//! counts RUNNING entries, not completions; utilization is busy core-seconds
//! over capacity core-seconds in the chosen window, as a percentage.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::task::{InstanceState, LogRecord, RecordState, TaskState};

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("log has no relevant records")]
    EmptyLog,
    #[error("measurement window has zero length")]
    ZeroWindow,
    #[error("log is not quiescent: {live} tasks lack a terminal event")]
    NonQuiescentLog { live: usize },
    #[error("bucket width must be positive")]
    BadBucket,
}

/// One task's RUNNING-to-terminal span with its resource shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpan {
    pub uid: String,
    pub start: f64,
    pub end: f64,
    pub cores: u32,
    pub gpus: u32,
    pub backend: Option<String>,
}

/// Pull `cores=<c> gpus=<g>` out of a NEW record's detail.
fn parse_shape(detail: Option<&str>) -> (u32, u32) {
    let mut cores = 1;
    let mut gpus = 0;
    for word in detail.unwrap_or_default().split_whitespace() {
        if let Some(v) = word.strip_prefix("cores=") {
            cores = v.parse().unwrap_or(1);
        } else if let Some(v) = word.strip_prefix("gpus=") {
            gpus = v.parse().unwrap_or(0);
        }
    }
    (cores, gpus)
}

/// Activity spans for every task that reached RUNNING. Errors if any such
/// task never reached a terminal state.
pub fn task_spans(records: &[LogRecord]) -> Result<Vec<TaskSpan>, AnalyticsError> {
    let mut shapes: BTreeMap<&str, (u32, u32)> = BTreeMap::new();
    let mut open: BTreeMap<&str, (f64, Option<String>)> = BTreeMap::new();
    let mut spans = Vec::new();
    for rec in records {
        let state = match rec.state {
            RecordState::Task(s) => s,
            RecordState::Instance(_) => continue,
        };
        match state {
            TaskState::New => {
                shapes.insert(&rec.uid, parse_shape(rec.detail.as_deref()));
            }
            TaskState::Running => {
                open.insert(&rec.uid, (rec.ts, rec.backend.clone()));
            }
            TaskState::Done | TaskState::Failed | TaskState::Canceled => {
                if let Some((start, backend)) = open.remove(rec.uid.as_str()) {
                    let (cores, gpus) = shapes.get(rec.uid.as_str()).copied().unwrap_or((1, 0));
                    spans.push(TaskSpan {
                        uid: rec.uid.clone(),
                        start,
                        end: rec.ts,
                        cores,
                        gpus,
                        backend,
                    });
                }
            }
            TaskState::Scheduled | TaskState::Submitted => {}
        }
    }
    if !open.is_empty() {
        return Err(AnalyticsError::NonQuiescentLog { live: open.len() });
    }
    Ok(spans)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    /// RUNNING entries observed.
    pub count: usize,
    pub first_start: f64,
    pub last_start: f64,
    /// count / max(last_start - first_start, bucket_s).
    pub avg_per_s: f64,
    /// Busiest bucket's rate.
    pub peak_per_s: f64,
    pub bucket_s: f64,
    /// (bucket start ts, starts in bucket), empty interior buckets included.
    pub series: Vec<(f64, u64)>,
}

fn throughput_of_starts(starts: &[f64], bucket_s: f64) -> Result<ThroughputReport, AnalyticsError> {
    if bucket_s <= 0.0 || !bucket_s.is_finite() {
        return Err(AnalyticsError::BadBucket);
    }
    if starts.is_empty() {
        return Err(AnalyticsError::EmptyLog);
    }
    let first = starts.iter().copied().fold(f64::INFINITY, f64::min);
    let last = starts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = last - first;
    let buckets = ((span / bucket_s).floor() as usize) + 1;
    let mut counts = vec![0u64; buckets];
    for &s in starts {
        let idx = (((s - first) / bucket_s).floor() as usize).min(buckets - 1);
        counts[idx] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0) as f64 / bucket_s;
    let series = counts
        .into_iter()
        .enumerate()
        .map(|(k, n)| (first + k as f64 * bucket_s, n))
        .collect();
    Ok(ThroughputReport {
        count: starts.len(),
        first_start: first,
        last_start: last,
        avg_per_s: starts.len() as f64 / span.max(bucket_s),
        peak_per_s: peak,
        bucket_s,
        series,
    })
}

/// Task start throughput over the whole log.
pub fn throughput(records: &[LogRecord], bucket_s: f64) -> Result<ThroughputReport, AnalyticsError> {
    let starts: Vec<f64> = records
        .iter()
        .filter(|r| r.task_state() == Some(TaskState::Running))
        .map(|r| r.ts)
        .collect();
    throughput_of_starts(&starts, bucket_s)
}

/// Start throughput split by the backend instance that ran the task.
pub fn throughput_by_backend(
    records: &[LogRecord],
    bucket_s: f64,
) -> Result<BTreeMap<String, ThroughputReport>, AnalyticsError> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        if r.task_state() == Some(TaskState::Running) {
            let key = r.backend.clone().unwrap_or_else(|| "-".to_string());
            groups.entry(key).or_default().push(r.ts);
        }
    }
    if groups.is_empty() {
        return Err(AnalyticsError::EmptyLog);
    }
    groups
        .into_iter()
        .map(|(k, starts)| throughput_of_starts(&starts, bucket_s).map(|t| (k, t)))
        .collect()
}

/// Which stretch of the log utilization is measured over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// [first RUNNING, last task terminal]: excludes bootstrap and admission.
    Net,
    /// [first record, last task terminal]: charges all startup overhead.
    Gross,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationReport {
    pub busy_core_s: f64,
    pub capacity_cores: u32,
    pub window_start: f64,
    pub window_end: f64,
    pub pct: f64,
    pub gpu_busy_s: f64,
    /// None when the capacity has no GPUs.
    pub gpu_pct: Option<f64>,
}

pub fn utilization(
    records: &[LogRecord],
    capacity_cores: u32,
    capacity_gpus: u32,
    window: Window,
) -> Result<UtilizationReport, AnalyticsError> {
    let spans = task_spans(records)?;
    if spans.is_empty() {
        return Err(AnalyticsError::EmptyLog);
    }
    let first_running = spans.iter().map(|s| s.start).fold(f64::INFINITY, f64::min);
    let last_terminal = spans.iter().map(|s| s.end).fold(f64::NEG_INFINITY, f64::max);
    let window_start = match window {
        Window::Net => first_running,
        Window::Gross => records.first().map(|r| r.ts).unwrap_or(first_running),
    };
    let len = last_terminal - window_start;
    if len <= 0.0 {
        return Err(AnalyticsError::ZeroWindow);
    }
    let busy_core_s: f64 = spans.iter().map(|s| s.cores as f64 * (s.end - s.start)).sum();
    let gpu_busy_s: f64 = spans.iter().map(|s| s.gpus as f64 * (s.end - s.start)).sum();
    let pct = 100.0 * busy_core_s / (capacity_cores as f64 * len);
    let gpu_pct =
        (capacity_gpus > 0).then(|| 100.0 * gpu_busy_s / (capacity_gpus as f64 * len));
    Ok(UtilizationReport {
        busy_core_s,
        capacity_cores,
        window_start,
        window_end: last_terminal,
        pct,
        gpu_busy_s,
        gpu_pct,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MakespanReport {
    /// Pilot start: the first record in the log.
    pub origin_ts: f64,
    pub last_terminal_ts: f64,
    pub seconds: f64,
}

/// Pilot start to last task terminal. Requires a quiescent log.
pub fn makespan(records: &[LogRecord]) -> Result<MakespanReport, AnalyticsError> {
    let mut last = f64::NEG_INFINITY;
    let mut saw_task = false;
    // Terminal events of never-ran tasks count too (canceled in queue).
    for rec in records {
        if let Some(state) = rec.task_state() {
            saw_task = true;
            if state.is_terminal() {
                last = last.max(rec.ts);
            }
        }
    }
    if !saw_task || records.is_empty() {
        return Err(AnalyticsError::EmptyLog);
    }
    let live = records
        .iter()
        .filter_map(|r| r.task_state().map(|s| (r.uid.as_str(), s)))
        .fold(BTreeMap::new(), |mut m: BTreeMap<&str, TaskState>, (uid, s)| {
            m.insert(uid, s);
            m
        })
        .values()
        .filter(|s| !s.is_terminal())
        .count();
    if live > 0 {
        return Err(AnalyticsError::NonQuiescentLog { live });
    }
    let origin = records.first().expect("non-empty").ts;
    Ok(MakespanReport { origin_ts: origin, last_terminal_ts: last, seconds: last - origin })
}

/// Running-task count after each change point, coalesced per timestamp.
/// Half-open spans: a task ending at t and one starting at t never overlap.
pub fn concurrency_series(records: &[LogRecord]) -> Result<Vec<(f64, u32)>, AnalyticsError> {
    let spans = task_spans(records)?;
    let mut deltas: BTreeMap<u64, (f64, i64)> = BTreeMap::new();
    // Key by bit pattern to coalesce exactly equal timestamps.
    let mut put = |ts: f64, d: i64| {
        let e = deltas.entry(ts.to_bits()).or_insert((ts, 0));
        e.1 += d;
    };
    for s in &spans {
        put(s.start, 1);
        put(s.end, -1);
    }
    let mut points: Vec<(f64, i64)> = deltas.into_values().collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut level: i64 = 0;
    let mut series = Vec::with_capacity(points.len());
    for (ts, d) in points {
        level += d;
        debug_assert!(level >= 0);
        series.push((ts, level as u32));
    }
    Ok(series)
}

/// Highest simultaneous running-task count anywhere in the log.
pub fn max_concurrency(records: &[LogRecord]) -> Result<u32, AnalyticsError> {
    Ok(concurrency_series(records)?.iter().map(|&(_, n)| n).max().unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    /// Instance id -> seconds from BOOTING to READY.
    pub per_instance: BTreeMap<String, f64>,
    /// Pilot-level setup cost: instances boot concurrently, so the slowest
    /// one defines it. Never the sum.
    pub aggregate_s: f64,
}

pub fn overhead(records: &[LogRecord]) -> Result<OverheadReport, AnalyticsError> {
    let mut booting: BTreeMap<&str, f64> = BTreeMap::new();
    let mut per_instance = BTreeMap::new();
    for rec in records {
        match rec.state {
            RecordState::Instance(InstanceState::Booting) => {
                booting.insert(&rec.uid, rec.ts);
            }
            RecordState::Instance(InstanceState::Ready) => {
                if let Some(&t0) = booting.get(rec.uid.as_str()) {
                    per_instance.insert(rec.uid.clone(), rec.ts - t0);
                }
            }
            _ => {}
        }
    }
    if per_instance.is_empty() {
        return Err(AnalyticsError::EmptyLog);
    }
    let aggregate_s = per_instance.values().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(OverheadReport { per_instance, aggregate_s })
}

/// CSV for the throughput bucket series: `bucket_start_s,count,rate_per_s`.
pub fn throughput_series_csv(t: &ThroughputReport) -> String {
    let mut out = String::from("bucket_start_s,count,rate_per_s\n");
    for &(ts, n) in &t.series {
        out.push_str(&format!("{:.6},{},{}\n", ts, n, n as f64 / t.bucket_s));
    }
    out
}

/// CSV for the concurrency step series: `ts_s,running`.
pub fn concurrency_series_csv(series: &[(f64, u32)]) -> String {
    let mut out = String::from("ts_s,running\n");
    for &(ts, n) in series {
        out.push_str(&format!("{ts:.6},{n}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::LogRecord as R;
    use crate::task::TaskState as S;

    fn new_rec(ts: f64, uid: &str, cores: u32, gpus: u32) -> R {
        R::task(ts, uid, S::New, None, None, Some(format!("cores={cores} gpus={gpus}")))
    }

    fn run_rec(ts: f64, uid: &str, backend: &str) -> R {
        R::task(ts, uid, S::Running, Some(0), Some(backend.to_string()), None)
    }

    fn done_rec(ts: f64, uid: &str) -> R {
        R::task(ts, uid, S::Done, Some(0), None, None)
    }

    /// One task per (start, end, cores) triple, single backend.
    fn log_of(tasks: &[(f64, f64, u32)]) -> Vec<R> {
        let mut recs = Vec::new();
        for (i, &(s, e, c)) in tasks.iter().enumerate() {
            let uid = format!("t{i}");
            recs.push(new_rec(0.0, &uid, c, 0));
            recs.push(run_rec(s, &uid, "b0"));
            recs.push(done_rec(e, &uid));
        }
        recs.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        recs
    }

    #[test]
    fn throughput_fixture_matches_hand_numbers() {
        // Starts at {0, 0, 0.5, 1.2}, 1 s buckets.
        let log = log_of(&[(0.0, 2.0, 1), (0.0, 2.0, 1), (0.5, 2.0, 1), (1.2, 2.0, 1)]);
        let t = throughput(&log, 1.0).unwrap();
        assert!((t.avg_per_s - 4.0 / 1.2).abs() < 1e-12);
        assert_eq!(t.series, vec![(0.0, 3), (1.0, 1)]);
        assert!((t.peak_per_s - 3.0).abs() < 1e-12);
        assert_eq!(t.count, 4);
    }

    #[test]
    fn throughput_includes_interior_empty_buckets() {
        let log = log_of(&[(0.0, 1.0, 1), (2.5, 3.0, 1)]);
        let t = throughput(&log, 1.0).unwrap();
        assert_eq!(t.series, vec![(0.0, 1), (1.0, 0), (2.0, 1)]);
    }

    #[test]
    fn throughput_all_simultaneous_uses_bucket_floor() {
        let log = log_of(&[(5.0, 6.0, 1), (5.0, 6.0, 1)]);
        let t = throughput(&log, 2.0).unwrap();
        // Span is zero; the rate floor is one bucket width.
        assert!((t.avg_per_s - 1.0).abs() < 1e-12);
        assert_eq!(t.series, vec![(5.0, 2)]);
    }

    #[test]
    fn utilization_matches_closed_form() {
        // 2 cores busy 10 s + 1 core busy 5 s on 4 cores over [0, 10].
        let log = log_of(&[(0.0, 10.0, 2), (0.0, 5.0, 1)]);
        let u = utilization(&log, 4, 0, Window::Net).unwrap();
        assert!((u.busy_core_s - 25.0).abs() < 1e-12);
        assert!((u.pct - 100.0 * 25.0 / 40.0).abs() < 1e-12);
        assert_eq!(u.gpu_pct, None);
    }

    #[test]
    fn gross_window_charges_startup_idle() {
        let mut log = vec![R::instance(0.0, "b0", crate::task::InstanceState::Booting, Some(0), None)];
        log.extend(log_of(&[(10.0, 20.0, 4)]));
        log.insert(1, R::instance(10.0, "b0", crate::task::InstanceState::Ready, Some(0), None));
        let net = utilization(&log, 4, 0, Window::Net).unwrap();
        let gross = utilization(&log, 4, 0, Window::Gross).unwrap();
        assert!((net.pct - 100.0).abs() < 1e-12);
        assert!((gross.pct - 50.0).abs() < 1e-12);
    }

    #[test]
    fn concurrency_half_open_handoff_keeps_level() {
        // 2 tasks end at 10 exactly when 2 others start: level stays 2.
        let log = log_of(&[(0.0, 10.0, 1), (0.0, 10.0, 1), (10.0, 20.0, 1), (10.0, 20.0, 1)]);
        let series = concurrency_series(&log).unwrap();
        assert_eq!(series, vec![(0.0, 2), (10.0, 2), (20.0, 0)]);
        assert_eq!(max_concurrency(&log).unwrap(), 2);
    }

    #[test]
    fn makespan_requires_quiescence() {
        let mut log = log_of(&[(0.0, 10.0, 1)]);
        let m = makespan(&log).unwrap();
        assert_eq!((m.origin_ts, m.seconds), (0.0, 10.0));
        log.push(new_rec(11.0, "live", 1, 0));
        log.push(run_rec(12.0, "live", "b0"));
        assert_eq!(
            makespan(&log).unwrap_err(),
            AnalyticsError::NonQuiescentLog { live: 1 }
        );
    }

    #[test]
    fn makespan_counts_never_ran_terminals() {
        let log = vec![
            new_rec(0.0, "a", 1, 0),
            run_rec(1.0, "a", "b0"),
            done_rec(5.0, "a"),
            new_rec(0.0, "q", 1, 0),
            R::task(7.0, "q", S::Canceled, None, None, None),
        ];
        let m = makespan(&log).unwrap();
        assert_eq!(m.seconds, 7.0);
    }

    #[test]
    fn failed_after_running_still_burns_cores() {
        let log = vec![
            new_rec(0.0, "a", 3, 1),
            run_rec(2.0, "a", "b0"),
            R::task(6.0, "a", S::Failed, Some(0), None, Some("killed".into())),
        ];
        let u = utilization(&log, 3, 1, Window::Net).unwrap();
        assert!((u.busy_core_s - 12.0).abs() < 1e-12);
        assert!((u.gpu_busy_s - 4.0).abs() < 1e-12);
        assert_eq!(u.gpu_pct, Some(100.0));
    }

    #[test]
    fn overhead_is_max_never_sum() {
        use crate::task::InstanceState as I;
        let mut log = Vec::new();
        for (id, ready) in [("h0", 20.0), ("h1", 20.0), ("p0", 9.0), ("p1", 9.0)] {
            log.push(R::instance(0.0, id, I::Booting, Some(0), None));
            log.push(R::instance(ready, id, I::Ready, Some(0), None));
        }
        let o = overhead(&log).unwrap();
        assert_eq!(o.per_instance.len(), 4);
        assert_eq!(o.per_instance["h0"], 20.0);
        assert_eq!(o.per_instance["p1"], 9.0);
        assert_eq!(o.aggregate_s, 20.0);
    }

    #[test]
    fn by_backend_split_and_csv_shapes() {
        let mut log = log_of(&[(0.0, 1.0, 1), (0.5, 1.0, 1)]);
        log.push(new_rec(0.0, "x", 1, 0));
        log.push(run_rec(2.0, "x", "b1"));
        log.push(done_rec(3.0, "x"));
        let by = throughput_by_backend(&log, 1.0).unwrap();
        assert_eq!(by.len(), 2);
        assert_eq!(by["b0"].count, 2);
        assert_eq!(by["b1"].count, 1);
        let csv = throughput_series_csv(&by["b0"]);
        assert!(csv.starts_with("bucket_start_s,count,rate_per_s\n"));
        assert_eq!(csv.lines().count(), 2);
        let series = concurrency_series(&log).unwrap();
        let ccsv = concurrency_series_csv(&series);
        assert!(ccsv.starts_with("ts_s,running\n"));
        assert_eq!(ccsv.lines().count(), series.len() + 1);
    }

    #[test]
    fn error_paths_are_distinct() {
        assert_eq!(throughput(&[], 1.0).unwrap_err(), AnalyticsError::EmptyLog);
        assert_eq!(throughput(&[], 0.0).unwrap_err(), AnalyticsError::BadBucket);
        let zero = vec![
            new_rec(5.0, "a", 1, 0),
            run_rec(5.0, "a", "b0"),
            done_rec(5.0, "a"),
        ];
        assert_eq!(
            utilization(&zero, 1, 0, Window::Net).unwrap_err(),
            AnalyticsError::ZeroWindow
        );
    }
}
