//! Experiment runner: builds a pilot out of a `RunConfig`, drives it to
//! quiescence on the virtual clock (or wall clock in real mode), and writes
//! the artifact set (event log, metrics, plot data, config echo, summary).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::agent::{Agent, EngineAction};
use crate::analytics::{
    concurrency_series, makespan, max_concurrency, overhead, throughput, throughput_by_backend,
    utilization, AnalyticsError, Window,
};
use crate::backend::{Backend, BackendFamily};
use crate::backends::capped::CappedBackend;
use crate::backends::hierarchical::HierarchicalBackend;
use crate::backends::workerpool::WorkerpoolBackend;
use crate::config::{Mode, RunConfig};
use crate::resources::{Allocation, NodeSpec, Partition};
use crate::sim::SimClock;
use crate::task::{
    serialize_log, validate_log, DurationSpec, Registry, TaskDescription, TaskState,
    ValidationError,
};
use crate::workloads::{
    adaptive_scale, filler_task, generate_campaign, generate_uniform, CampaignPlan, WorkloadError,
    WorkloadKind,
};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot build pilot: {0}")]
    Build(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("accounting audit failed: {0}")]
    Audit(String),
    #[error("run stalled: {live} tasks never reached a terminal state")]
    Stalled { live: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("no figure analog {0}; known ids are 3 through 8")]
    UnknownFigureId(u8),
    #[error("real mode: {0}")]
    Real(String),
}

/// Where every instance lives: family, id, and its node slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    pub instances: Vec<(BackendFamily, String, Partition)>,
    pub alloc: Allocation,
}

impl PilotPlan {
    pub fn capacity_cores(&self) -> u32 {
        self.alloc.total_cores()
    }

    pub fn capacity_gpus(&self) -> u32 {
        self.alloc.total_gpus()
    }

    /// instance id -> family short name, for grouping metrics.
    pub fn family_by_id(&self) -> BTreeMap<String, &'static str> {
        self.instances.iter().map(|(fam, id, _)| (id.clone(), fam.name())).collect()
    }
}

/// Node share per family, proportional to instance counts. Every family
/// keeps at least one node per instance; leftovers go to the largest
/// fractional remainders, ties in declaration order.
fn family_shares(nodes: u32, counts: &[(BackendFamily, u32)]) -> Vec<u32> {
    let total: u32 = counts.iter().map(|&(_, c)| c).sum();
    let exact: Vec<f64> =
        counts.iter().map(|&(_, c)| nodes as f64 * c as f64 / total as f64).collect();
    let mut shares: Vec<u32> = counts
        .iter()
        .zip(&exact)
        .map(|(&(_, c), &e)| if c == 0 { 0 } else { (e.floor() as u32).max(c) })
        .collect();
    let mut sum: u32 = shares.iter().sum();
    while sum < nodes {
        let idx = (0..shares.len())
            .filter(|&i| counts[i].1 > 0)
            .max_by(|&a, &b| (exact[a] - shares[a] as f64).total_cmp(&(exact[b] - shares[b] as f64)))
            .expect("at least one family present");
        shares[idx] += 1;
        sum += 1;
    }
    while sum > nodes {
        let idx = (0..shares.len())
            .filter(|&i| shares[i] > counts[i].1)
            .min_by(|&a, &b| (exact[a] - shares[a] as f64).total_cmp(&(exact[b] - shares[b] as f64)))
            .expect("shares exceed instance minima");
        shares[idx] -= 1;
        sum -= 1;
    }
    shares
}

/// Lay the pilot out: disjoint contiguous node runs per instance, in family
/// order (capped, hierarchical, pool). Real mode models the single host as
/// one pseudo-node per instance with an even share of the detected cores.
pub fn plan_pilot(cfg: &RunConfig) -> Result<PilotPlan, RunError> {
    let counts = [
        (BackendFamily::Capped, cfg.capped_instances),
        (BackendFamily::Hierarchical, cfg.hierarchical_instances),
        (BackendFamily::Workerpool, cfg.pool_instances),
    ];
    let alloc = match cfg.mode {
        Mode::Sim => Allocation::new(cfg.nodes, cfg.node_spec),
        Mode::Real => {
            let total = cfg.total_instances();
            let spec = NodeSpec {
                cores_per_node: (cfg.node_spec.cores_per_node / total).max(1),
                gpus_per_node: cfg.node_spec.gpus_per_node / total,
                smt: cfg.node_spec.smt,
            };
            Allocation::new(total, spec)
        }
    };
    let shares = family_shares(alloc.node_count, &counts);
    let mut instances = Vec::new();
    let mut next_node = 0u32;
    let mut part_id = 0u32;
    for (&(family, count), &share) in counts.iter().zip(&shares) {
        if count == 0 {
            continue;
        }
        // Split the family block like partition_allocation: sizes differ by
        // at most one, remainder to the lowest-index instances.
        let base = share / count;
        let rem = share % count;
        if base == 0 {
            return Err(RunError::Build(format!(
                "{} {} instances cannot each own a node out of a {}-node share",
                count,
                family.name(),
                share
            )));
        }
        for i in 0..count {
            let size = base + u32::from(i < rem);
            let node_ids: Vec<u32> = (next_node..next_node + size).collect();
            next_node += size;
            let partition = Partition { id: part_id, node_ids, spec: alloc.spec };
            part_id += 1;
            instances.push((family, format!("{}{}", family.name(), i), partition));
        }
    }
    Ok(PilotPlan { instances, alloc })
}

/// Virtual-clock backends for every planned instance.
pub fn sim_backends(cfg: &RunConfig, plan: &PilotPlan) -> Vec<Box<dyn Backend>> {
    plan.instances
        .iter()
        .map(|(family, id, part)| -> Box<dyn Backend> {
            match family {
                BackendFamily::Capped => Box::new(CappedBackend::new(
                    id.clone(),
                    part.clone(),
                    cfg.capped_params,
                    cfg.capped,
                )),
                BackendFamily::Hierarchical => Box::new(HierarchicalBackend::new(
                    id.clone(),
                    part.clone(),
                    cfg.hier_params,
                    cfg.hier,
                )),
                BackendFamily::Workerpool => Box::new(WorkerpoolBackend::new(
                    id.clone(),
                    part.clone(),
                    cfg.pool_params,
                    cfg.pool,
                )),
            }
        })
        .collect()
}

/// Rescale a task body; payloads carry the scaled time so real commands and
/// walltime hints stay consistent with the model.
fn scale_task(mut desc: TaskDescription, k: f64) -> TaskDescription {
    if k != 1.0 {
        if let DurationSpec::Sleep(s) = desc.duration {
            desc.duration = DurationSpec::Sleep(s * k);
            desc.payload = format!("sleep {}", s * k);
        }
    }
    desc
}

pub(crate) struct StageTrack {
    stage: usize,
    uids: Vec<String>,
    fills: usize,
    released_next: bool,
}

/// Feeds the agent: one shot for uniform workloads, staged waves with
/// adaptive growth for campaigns.
pub(crate) enum Feeder {
    Uniform {
        tasks: Vec<TaskDescription>,
    },
    Campaign {
        plan: CampaignPlan,
        next_stage: usize,
        tracks: Vec<StageTrack>,
        stage_fraction: f64,
        adaptive: bool,
        scale: f64,
    },
}

impl Feeder {
    pub(crate) fn new(cfg: &RunConfig, alloc: &Allocation) -> Result<Feeder, RunError> {
        match cfg.workload.kind {
            WorkloadKind::Campaign => Ok(Feeder::Campaign {
                plan: generate_campaign(cfg.nodes, cfg.node_spec, cfg.workload.seed)?,
                next_stage: 0,
                tracks: Vec::new(),
                stage_fraction: cfg.stage_fraction,
                adaptive: cfg.adaptive,
                scale: cfg.time_scale,
            }),
            _ => Ok(Feeder::Uniform { tasks: generate_uniform(&cfg.workload, alloc)? }),
        }
    }

    pub(crate) fn begin(
        &mut self,
        agent: &mut Agent,
        now: f64,
        clock: &mut SimClock<EngineAction>,
    ) -> Result<(), RunError> {
        match self {
            Feeder::Uniform { tasks } => {
                for desc in std::mem::take(tasks) {
                    agent.enqueue(desc, now, clock)?;
                }
                Ok(())
            }
            Feeder::Campaign { .. } => {
                self.submit_stage(agent, now, clock)?;
                self.poll(agent, now, clock)
            }
        }
    }

    fn submit_stage(
        &mut self,
        agent: &mut Agent,
        now: f64,
        clock: &mut SimClock<EngineAction>,
    ) -> Result<(), RunError> {
        let Feeder::Campaign { plan, next_stage, tracks, scale, .. } = self else {
            unreachable!("stages exist only for campaigns")
        };
        let stage = &plan.stages[*next_stage];
        let mut uids = Vec::with_capacity(stage.tasks.len());
        for desc in &stage.tasks {
            uids.push(desc.uid.clone());
            agent.enqueue(scale_task(desc.clone(), *scale), now, clock)?;
        }
        tracks.push(StageTrack { stage: *next_stage, uids, fills: 0, released_next: false });
        *next_stage += 1;
        Ok(())
    }

    /// Campaign bookkeeping after each event batch: grow the running stage
    /// while cores idle, release the next stage at the completion fraction.
    pub(crate) fn poll(
        &mut self,
        agent: &mut Agent,
        now: f64,
        clock: &mut SimClock<EngineAction>,
    ) -> Result<(), RunError> {
        loop {
            let Feeder::Campaign { plan, next_stage, tracks, stage_fraction, adaptive, scale } =
                &mut *self
            else {
                return Ok(());
            };
            let Some(track) = tracks.last_mut() else { return Ok(()) };
            if track.released_next {
                return Ok(());
            }
            let stage = &plan.stages[track.stage];
            let done =
                track.uids.iter().filter(|u| terminal(agent.registry(), u)).count();
            // Only the newest wave grows, and only while it is still running.
            if *adaptive && stage.adaptive && done < track.uids.len() {
                let free: u32 =
                    (0..agent.instance_count()).map(|i| agent.instance(i).free_cores()).sum();
                let extra = adaptive_scale(free, stage, track.uids.len(), plan.nodes);
                for _ in 0..extra {
                    let desc = scale_task(filler_task(stage.name, track.fills), *scale);
                    track.fills += 1;
                    track.uids.push(desc.uid.clone());
                    agent.enqueue(desc, now, clock)?;
                }
            }
            let need = (*stage_fraction * track.uids.len() as f64).ceil() as usize;
            if done < need || *next_stage >= plan.stages.len() {
                return Ok(());
            }
            track.released_next = true;
            self.submit_stage(agent, now, clock)?;
        }
    }

    pub(crate) fn stages_pending(&self) -> usize {
        match self {
            Feeder::Uniform { .. } => 0,
            Feeder::Campaign { plan, next_stage, .. } => plan.stages.len() - next_stage,
        }
    }
}

fn terminal(registry: &Registry, uid: &str) -> bool {
    registry.task(uid).map(|t| t.state.is_terminal()).unwrap_or(false)
}

pub struct RunResult {
    pub registry: Registry,
    pub plan: PilotPlan,
    /// Modeled end time: last clock instant handled.
    pub end_ts: f64,
    pub wall_s: f64,
    pub timed_out: bool,
    /// Backend events the registry refused (should stay 0).
    pub pump_errors: usize,
}

impl RunResult {
    pub fn count(&self, state: TaskState) -> usize {
        self.registry.tasks().filter(|t| t.state == state).count()
    }
}

/// Run in the configured mode.
pub fn execute(cfg: &RunConfig) -> Result<RunResult, RunError> {
    match cfg.mode {
        Mode::Sim => run_sim(cfg),
        Mode::Real => crate::real::run_real(cfg),
    }
}

/// Discrete-event run: advance to the earliest pending instant, handle the
/// batch, pump events, let the feeder react, repeat until quiescent.
pub fn run_sim(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let wall0 = Instant::now();
    let plan = plan_pilot(cfg)?;
    let mut agent = Agent::new(cfg.agent.clone(), sim_backends(cfg, &plan));
    let mut clock: SimClock<EngineAction> = SimClock::new();
    agent.start(0.0, &mut clock);
    if let Some(fault) = cfg.fault {
        clock
            .schedule_at(
                fault.at_s,
                EngineAction::Fault { idx: fault.instance, cause: "scripted fault".to_string() },
            )
            .expect("fault times are non-negative");
    }
    let mut feeder = Feeder::new(cfg, &plan.alloc)?;
    feeder.begin(&mut agent, 0.0, &mut clock)?;
    let mut timed_out = false;
    let mut pump_errors = 0usize;
    while clock.pending() > 0 {
        let batch = clock.advance().expect("pending checked");
        if batch.now > cfg.timeout_s {
            timed_out = true;
            break;
        }
        for action in batch.actions {
            agent.handle(action, batch.now, &mut clock);
        }
        pump_errors += agent.pump(batch.now, &mut clock).errors;
        feeder.poll(&mut agent, batch.now, &mut clock)?;
    }
    let end_ts = clock.now();
    agent.shutdown(end_ts);
    agent.audit().map_err(RunError::Audit)?;
    if !timed_out {
        let live = agent.registry().non_terminal_uids().len() + feeder.stages_pending();
        if live > 0 {
            return Err(RunError::Stalled { live });
        }
    }
    Ok(RunResult {
        registry: agent.into_registry(),
        plan,
        end_ts,
        wall_s: wall0.elapsed().as_secs_f64(),
        timed_out,
        pump_errors,
    })
}

/// Everything the figure-analog emitters need from a finished run.
pub struct PlotContext<'a> {
    pub records: &'a [crate::task::LogRecord],
    pub capacity_cores: u32,
    pub capacity_gpus: u32,
    /// Configured launch cap when a capped instance is present.
    pub cap: Option<u32>,
    /// instance id -> family short name.
    pub families: BTreeMap<String, &'static str>,
    pub bucket_s: f64,
}

fn csv_f(v: f64) -> String {
    format!("{v:.6}")
}

/// Write one figure-analog CSV into `dir`; returns the file path.
///
/// Columns: 3 `t,running,cap`; 4 `family,tasks,avg_per_s,peak_per_s`;
/// 5 `instance,tasks,avg_per_s,peak_per_s`; 6 `window,busy_core_s,
/// capacity_core_s,util_pct,gpu_util_pct`; 7 `instance,family,overhead_s`;
/// 8 `ts,running,starts_per_s`.
pub fn emit_plotdata(ctx: &PlotContext, which: u8, dir: &Path) -> Result<PathBuf, RunError> {
    let mut out = String::new();
    match which {
        3 => {
            out.push_str("t,running,cap\n");
            let cap = ctx.cap.unwrap_or(ctx.capacity_cores);
            if let Ok(series) = concurrency_series(ctx.records) {
                for (ts, running) in series {
                    let _ = writeln!(out, "{},{running},{cap}", csv_f(ts));
                }
            }
        }
        4 => {
            out.push_str("family,tasks,avg_per_s,peak_per_s\n");
            if let Ok(by_instance) = throughput_by_backend(ctx.records, ctx.bucket_s) {
                let mut starts: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                for (id, report) in &by_instance {
                    let family = ctx.families.get(id).copied().unwrap_or("-");
                    let bucket = starts.entry(family).or_default();
                    for &(ts, n) in &report.series {
                        bucket.extend(std::iter::repeat(ts).take(n as usize));
                    }
                }
                for (family, ts) in starts {
                    let span =
                        ts.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                            - ts.iter().copied().fold(f64::INFINITY, f64::min);
                    let avg = ts.len() as f64 / span.max(ctx.bucket_s);
                    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
                    let t0 = ts.iter().copied().fold(f64::INFINITY, f64::min);
                    for &t in &ts {
                        *counts.entry(((t - t0) / ctx.bucket_s) as u64).or_default() += 1;
                    }
                    let peak =
                        counts.values().copied().max().unwrap_or(0) as f64 / ctx.bucket_s;
                    let _ = writeln!(out, "{family},{},{},{}", ts.len(), csv_f(avg), csv_f(peak));
                }
            }
        }
        5 => {
            out.push_str("instance,tasks,avg_per_s,peak_per_s\n");
            if let Ok(by_instance) = throughput_by_backend(ctx.records, ctx.bucket_s) {
                for (id, report) in by_instance {
                    let _ = writeln!(
                        out,
                        "{id},{},{},{}",
                        report.count,
                        csv_f(report.avg_per_s),
                        csv_f(report.peak_per_s)
                    );
                }
            }
        }
        6 => {
            out.push_str("window,busy_core_s,capacity_core_s,util_pct,gpu_util_pct\n");
            for (name, window) in [("net", Window::Net), ("gross", Window::Gross)] {
                if let Ok(u) =
                    utilization(ctx.records, ctx.capacity_cores, ctx.capacity_gpus, window)
                {
                    let span = u.window_end - u.window_start;
                    let gpu = u.gpu_pct.map(csv_f).unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "{name},{},{},{},{gpu}",
                        csv_f(u.busy_core_s),
                        csv_f(ctx.capacity_cores as f64 * span),
                        csv_f(u.pct)
                    );
                }
            }
        }
        7 => {
            out.push_str("instance,family,overhead_s\n");
            if let Ok(report) = overhead(ctx.records) {
                for (id, seconds) in &report.per_instance {
                    let family = ctx.families.get(id).copied().unwrap_or("-");
                    let _ = writeln!(out, "{id},{family},{}", csv_f(*seconds));
                }
            }
        }
        8 => {
            out.push_str("ts,running,starts_per_s\n");
            if let (Ok(series), Ok(rates)) =
                (concurrency_series(ctx.records), throughput(ctx.records, ctx.bucket_s))
            {
                for (ts, running) in series {
                    let idx = ((ts - rates.first_start) / rates.bucket_s).floor();
                    let rate = if idx >= 0.0 && (idx as usize) < rates.series.len() {
                        rates.series[idx as usize].1 as f64 / rates.bucket_s
                    } else {
                        0.0
                    };
                    let _ = writeln!(out, "{},{running},{}", csv_f(ts), csv_f(rate));
                }
            }
        }
        other => return Err(RunError::UnknownFigureId(other)),
    }
    let path = dir.join(format!("fig_analog_{which}.csv"));
    std::fs::write(&path, out)?;
    Ok(path)
}

/// One row of run-level metrics; stable column order.
pub fn metrics_csv(cfg: &RunConfig, result: &RunResult, bucket_s: f64) -> String {
    let records = result.registry.log();
    let header = "exp_id,mode,nodes,capacity_cores,capacity_gpus,tasks,done,failed,canceled,\
                  makespan_s,avg_throughput_per_s,peak_throughput_per_s,util_net_pct,\
                  util_gross_pct,gpu_util_net_pct,max_concurrency,overhead_aggregate_s,\
                  timed_out,wall_s,log_violations";
    let mode = match cfg.mode {
        Mode::Sim => "sim",
        Mode::Real => "real",
    };
    let mk = makespan(records).map(|m| csv_f(m.seconds)).unwrap_or_default();
    let (avg, peak) = throughput(records, bucket_s)
        .map(|t| (csv_f(t.avg_per_s), csv_f(t.peak_per_s)))
        .unwrap_or_default();
    let cores = result.plan.capacity_cores();
    let gpus = result.plan.capacity_gpus();
    let net = utilization(records, cores, gpus, Window::Net).ok();
    let gross = utilization(records, cores, gpus, Window::Gross)
        .map(|u| csv_f(u.pct))
        .unwrap_or_default();
    let gpu_net = net.as_ref().and_then(|u| u.gpu_pct).map(csv_f).unwrap_or_default();
    let net = net.map(|u| csv_f(u.pct)).unwrap_or_default();
    let conc = max_concurrency(records).map(|c| c.to_string()).unwrap_or_default();
    let over = overhead(records).map(|o| csv_f(o.aggregate_s)).unwrap_or_default();
    let violations = validate_log(records).len();
    format!(
        "{header}\n{exp},{mode},{nodes},{cores},{gpus},{tasks},{done},{failed},{canceled},\
         {mk},{avg},{peak},{net},{gross},{gpu_net},{conc},{over},{timed_out},{wall},{violations}\n",
        exp = cfg.exp_id,
        nodes = result.plan.alloc.node_count,
        tasks = result.registry.len(),
        done = result.count(TaskState::Done),
        failed = result.count(TaskState::Failed),
        canceled = result.count(TaskState::Canceled),
        timed_out = result.timed_out,
        wall = csv_f(result.wall_s),
    )
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub events_path: PathBuf,
    pub metrics_path: PathBuf,
    pub plotdata_paths: Vec<PathBuf>,
    pub config_echo_path: PathBuf,
    pub summary_path: PathBuf,
    pub result: RunResult,
}

/// Output root: PILOTRT_OUT beats the configured dir; runs nest under their
/// experiment id.
fn resolve_out_dir(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os("PILOTRT_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output_dir.clone());
    root.join(&cfg.exp_id)
}

/// Run and persist the full artifact set. `config_echo` is written back
/// verbatim so artifacts are self-describing.
pub fn run_experiment(cfg: &RunConfig, config_echo: &str) -> Result<RunArtifacts, RunError> {
    let result = execute(cfg)?;
    let bucket_s = 1.0;
    let out_dir = resolve_out_dir(cfg);
    std::fs::create_dir_all(&out_dir)?;
    let events_path = out_dir.join("events.tsv");
    std::fs::write(&events_path, serialize_log(result.registry.log()))?;
    let metrics_path = out_dir.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_csv(cfg, &result, bucket_s))?;
    let config_echo_path = out_dir.join("config.txt");
    std::fs::write(&config_echo_path, config_echo)?;
    let ctx = PlotContext {
        records: result.registry.log(),
        capacity_cores: result.plan.capacity_cores(),
        capacity_gpus: result.plan.capacity_gpus(),
        cap: (cfg.capped_instances > 0).then_some(cfg.capped.cap),
        families: result.plan.family_by_id(),
        bucket_s,
    };
    let mut plotdata_paths = Vec::new();
    for which in 3..=8 {
        plotdata_paths.push(emit_plotdata(&ctx, which, &out_dir)?);
    }
    let summary_path = out_dir.join("summary.txt");
    let violations = validate_log(result.registry.log());
    let summary = format!(
        "exp_id: {}\nstatus: {}\nend_ts_s: {}\nwall_s: {}\ntasks: {}\ndone: {}\nfailed: {}\n\
         canceled: {}\npump_errors: {}\nlog_violations: {}\nseed: {}\ntime_scale: {}\n",
        cfg.exp_id,
        if result.timed_out { "partial (timeout)" } else { "complete" },
        csv_f(result.end_ts),
        csv_f(result.wall_s),
        result.registry.len(),
        result.count(TaskState::Done),
        result.count(TaskState::Failed),
        result.count(TaskState::Canceled),
        result.pump_errors,
        violations.len(),
        cfg.seed,
        cfg.time_scale,
    );
    std::fs::write(&summary_path, summary)?;
    Ok(RunArtifacts {
        out_dir,
        events_path,
        metrics_path,
        plotdata_paths,
        config_echo_path,
        summary_path,
        result,
    })
}
