//! Command line front end: run experiments from config files or presets,
//! validate event logs, and compute metrics from recorded runs.
//!
//! Exit codes: 0 clean, 1 run or log found unhealthy (violations, timeout),
//! 2 bad input (config, arguments, IO).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pilotrt::analytics::{
    makespan, max_concurrency, overhead, throughput, utilization, Window,
};
use pilotrt::config::{parse_config, rescale_time, Mode, RunConfig};
use pilotrt::harness::run_experiment;
use pilotrt::presets::{preset_names, preset_text};
use pilotrt::resources::{Allocation, NodeSpec};
use pilotrt::task::{parse_log, validate_log, TaskState};

#[derive(Parser)]
#[command(name = "pilotrt", version, about = "Pilot-style task runtime")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment from a config file or a preset name.
    Run {
        /// Path to a key=value config file, or a preset name.
        config: String,
        /// Override the execution mode (sim or real).
        #[arg(long)]
        mode: Option<String>,
        /// Override the top-level seed (and the workload seed with it).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the time scale; rescales every configured time quantity.
        #[arg(long = "time-scale")]
        time_scale: Option<f64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an event log for lifecycle and ordering violations.
    Validate {
        /// Path to an events.tsv file.
        events: PathBuf,
    },
    /// Compute throughput, utilization, makespan, and overhead from a log.
    Metrics {
        /// Path to an events.tsv file.
        events: PathBuf,
        /// Allocation the log ran on, as NODESxCORES[xGPUS[xSMT]].
        alloc: String,
        /// Throughput bucket width in seconds.
        #[arg(long, default_value_t = 1.0)]
        bucket: f64,
    },
    /// List the built-in presets.
    Presets,
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run { config, mode, seed, time_scale, out } => run(config, mode, seed, time_scale, out),
        Cmd::Validate { events } => validate(events),
        Cmd::Metrics { events, alloc, bucket } => metrics(events, alloc, bucket),
        Cmd::Presets => presets(),
    }
}

fn fail(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("pilotrt: {msg}");
    ExitCode::from(2)
}

fn load(source: &str) -> Result<(RunConfig, String), String> {
    let text = match preset_text(source) {
        Some(t) => t.to_string(),
        None => std::fs::read_to_string(source)
            .map_err(|e| format!("`{source}` is not a preset and not a readable file: {e}"))?,
    };
    let cfg = parse_config(&text).map_err(|e| format!("{source}: {e}"))?;
    Ok((cfg, text))
}

fn run(
    source: String,
    mode: Option<String>,
    seed: Option<u64>,
    time_scale: Option<f64>,
    out: Option<PathBuf>,
) -> ExitCode {
    let (mut cfg, text) = match load(&source) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let mut overrides = Vec::new();
    if let Some(m) = mode {
        let m = match m.as_str() {
            "sim" => Mode::Sim,
            "real" => Mode::Real,
            other => return fail(format!("unknown mode `{other}` (sim or real)")),
        };
        if m == Mode::Real && (cfg.nodes != 1 || cfg.time_scale != 1.0) {
            return fail("real mode needs nodes = 1 and time_scale = 1.0 in the base config");
        }
        cfg.mode = m;
        overrides.push(format!("mode={}", if m == Mode::Real { "real" } else { "sim" }));
    }
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.workload.seed = s;
        overrides.push(format!("seed={s}"));
    }
    if let Some(ts) = time_scale {
        if let Err(e) = rescale_time(&mut cfg, ts) {
            return fail(e);
        }
        overrides.push(format!("time_scale={ts}"));
    }
    if let Some(dir) = out {
        cfg.output_dir = dir;
    }
    // The echo must reproduce the run: the base text verbatim, plus the
    // overrides as a comment trailer (they are flags, not config keys).
    let echo = if overrides.is_empty() {
        text
    } else {
        format!("{text}\n# cli overrides: {}\n", overrides.join(" "))
    };
    let artifacts = match run_experiment(&cfg, &echo) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let result = &artifacts.result;
    let n = result.registry.len();
    let done = result.count(TaskState::Done);
    println!(
        "{}: {} tasks, {} done, end {:.3}s (wall {:.2}s)",
        cfg.exp_id, n, done, result.end_ts, result.wall_s
    );
    println!("artifacts: {}", artifacts.out_dir.display());
    let violations = validate_log(result.registry.log());
    if !violations.is_empty() {
        eprintln!("event log has {} violations; see `pilotrt validate`", violations.len());
        return ExitCode::from(1);
    }
    if result.timed_out {
        eprintln!("run hit the {:.0}s timeout; artifacts are partial", cfg.timeout_s);
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}

fn validate(events: PathBuf) -> ExitCode {
    let text = match std::fs::read_to_string(&events) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", events.display())),
    };
    let records = match parse_log(&text) {
        Ok(r) => r,
        Err(e) => return fail(format!("{}: {e}", events.display())),
    };
    let violations = validate_log(&records);
    if violations.is_empty() {
        let tasks = records.iter().filter(|r| r.task_state().is_some()).count();
        println!("ok: {} records ({tasks} task events), no violations", records.len());
        ExitCode::SUCCESS
    } else {
        for v in &violations {
            println!("{v}");
        }
        eprintln!("{} violations", violations.len());
        ExitCode::from(1)
    }
}

fn parse_alloc(s: &str) -> Result<Allocation, String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() < 2 || parts.len() > 4 {
        return Err(format!("`{s}` is not NODESxCORES[xGPUS[xSMT]]"));
    }
    let num = |i: usize, default: u32| -> Result<u32, String> {
        match parts.get(i) {
            Some(p) => p.parse().map_err(|_| format!("`{p}` is not a number in `{s}`")),
            None => Ok(default),
        }
    };
    let spec = NodeSpec {
        cores_per_node: num(1, 0)?,
        gpus_per_node: num(2, 0)?,
        smt: num(3, 1)?.max(1),
    };
    Ok(Allocation::new(num(0, 0)?, spec))
}

fn metrics(events: PathBuf, alloc: String, bucket: f64) -> ExitCode {
    let alloc = match parse_alloc(&alloc) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let text = match std::fs::read_to_string(&events) {
        Ok(t) => t,
        Err(e) => return fail(format!("{}: {e}", events.display())),
    };
    let records = match parse_log(&text) {
        Ok(r) => r,
        Err(e) => return fail(format!("{}: {e}", events.display())),
    };
    match makespan(&records) {
        Ok(m) => println!("makespan_s: {:.6}", m.seconds),
        Err(e) => return fail(e),
    }
    match throughput(&records, bucket) {
        Ok(t) => {
            println!("tasks_started: {}", t.count);
            println!("throughput_avg_per_s: {:.6}", t.avg_per_s);
            println!("throughput_peak_per_s: {:.6}", t.peak_per_s);
        }
        Err(e) => return fail(e),
    }
    for (name, window) in [("net", Window::Net), ("gross", Window::Gross)] {
        match utilization(&records, alloc.total_cores(), alloc.total_gpus(), window) {
            Ok(u) => {
                println!("util_{name}_pct: {:.6}", u.pct);
                if let Some(g) = u.gpu_pct {
                    println!("gpu_util_{name}_pct: {g:.6}");
                }
            }
            Err(e) => return fail(e),
        }
    }
    match max_concurrency(&records) {
        Ok(c) => println!("max_concurrency: {c}"),
        Err(e) => return fail(e),
    }
    match overhead(&records) {
        Ok(o) => {
            for (id, s) in &o.per_instance {
                println!("overhead_s[{id}]: {s:.6}");
            }
            println!("overhead_aggregate_s: {:.6}", o.aggregate_s);
        }
        Err(e) => return fail(e),
    }
    ExitCode::SUCCESS
}

fn presets() -> ExitCode {
    for name in preset_names() {
        let summary = preset_text(name)
            .and_then(|t| t.lines().find(|l| l.starts_with('#')))
            .map(|l| l.trim_start_matches('#').trim().to_string())
            .unwrap_or_default();
        println!("{name:24} {summary}");
    }
    ExitCode::SUCCESS
}
