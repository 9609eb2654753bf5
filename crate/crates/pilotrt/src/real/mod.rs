//! Local-process execution: the same pilot engine driven by the wall clock,
//! with executables spawned as child processes and functions served by
//! persistent worker processes over a framed pipe protocol.
//!
//! The single host is modeled as one pseudo-node per instance so partition
//! accounting stays identical to sim mode. Bootstrap and completion times
//! are measured, never modeled; the configured latency knobs only pace the
//! dispatch pipe.

pub mod backends;
pub mod proc;
pub mod wire;
pub mod worker;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::agent::{Agent, EngineAction};
use crate::backend::{Backend, BackendFamily};
use crate::config::RunConfig;
use crate::harness::{plan_pilot, Feeder, RunError, RunResult};
use crate::sim::SimClock;

use backends::{RealProcBackend, RealWorkerpool};

/// Poll cadence for OS-side progress (child exits, worker replies).
const TICK: Duration = Duration::from_millis(10);

/// Locate the worker binary: explicit override first, then next to the
/// running executable (and one directory up, for test binaries that live in
/// a subdirectory of the build tree).
pub fn worker_path() -> Result<PathBuf, RunError> {
    if let Some(p) = std::env::var_os("PILOTRT_WORKER") {
        let p = PathBuf::from(p);
        if p.is_file() {
            return Ok(p);
        }
        return Err(RunError::Real(format!("PILOTRT_WORKER points at nothing: {}", p.display())));
    }
    let exe = std::env::current_exe().map_err(|e| RunError::Real(format!("current_exe: {e}")))?;
    let mut dirs = Vec::new();
    if let Some(d) = exe.parent() {
        dirs.push(d.to_path_buf());
        if let Some(up) = d.parent() {
            dirs.push(up.to_path_buf());
        }
    }
    for dir in dirs {
        let candidate = dir.join("pilotrt-worker");
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(RunError::Real(
        "cannot locate the pilotrt-worker binary; build it or set PILOTRT_WORKER".to_string(),
    ))
}

fn real_backends(cfg: &RunConfig, plan: &crate::harness::PilotPlan) -> Result<Vec<Box<dyn Backend>>, RunError> {
    let needs_workers = plan.instances.iter().any(|(f, _, _)| *f == BackendFamily::Workerpool);
    let worker_bin = if needs_workers { Some(worker_path()?) } else { None };
    Ok(plan
        .instances
        .iter()
        .map(|(family, id, part)| -> Box<dyn Backend> {
            match family {
                BackendFamily::Capped => Box::new(RealProcBackend::capped(
                    id.clone(),
                    part.clone(),
                    cfg.capped_params,
                    cfg.capped,
                )),
                BackendFamily::Hierarchical => Box::new(RealProcBackend::hierarchical(
                    id.clone(),
                    part.clone(),
                    cfg.hier_params,
                )),
                BackendFamily::Workerpool => Box::new(RealWorkerpool::new(
                    id.clone(),
                    part.clone(),
                    cfg.pool_params,
                    cfg.pool,
                    worker_bin.clone().expect("resolved when pools are present"),
                )),
            }
        })
        .collect())
}

/// Wall-clock run loop: fire due dispatch timers, let every backend drain
/// OS progress, pump events, feed the workload, sleep a tick.
pub fn run_real(cfg: &RunConfig) -> Result<RunResult, RunError> {
    let plan = plan_pilot(cfg)?;
    let mut agent = Agent::new(cfg.agent.clone(), real_backends(cfg, &plan)?);
    let mut clock: SimClock<EngineAction> = SimClock::new();
    let wall0 = Instant::now();
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
    let mut now;
    loop {
        now = wall0.elapsed().as_secs_f64();
        // Timers fire at their due time but are handled at the observed wall
        // instant, so every record this iteration shares one timestamp.
        while clock.next_fire_at().is_some_and(|t| t <= now) {
            let batch = clock.advance().expect("due timer");
            for action in batch.actions {
                agent.handle(action, now, &mut clock);
            }
        }
        agent.tick(now, &mut clock);
        pump_errors += agent.pump(now, &mut clock).errors;
        feeder.poll(&mut agent, now, &mut clock)?;
        let idle = feeder.stages_pending() == 0 && agent.registry().all_terminal();
        if idle && (agent.registry().len() > 0 || now > 0.2) {
            break;
        }
        if now > cfg.timeout_s {
            timed_out = true;
            break;
        }
        std::thread::sleep(TICK);
    }
    agent.shutdown(now);
    agent.audit().map_err(RunError::Audit)?;
    Ok(RunResult {
        registry: agent.into_registry(),
        plan,
        end_ts: now,
        wall_s: wall0.elapsed().as_secs_f64(),
        timed_out,
        pump_errors,
    })
}
