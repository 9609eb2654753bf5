//! Acceptance suite: one test per criterion (A1 through A11), each printing
//! a single PASS line with the measured numbers. Run with
//! `cargo test --test acceptance` (add `-- --nocapture` to see the lines for
//! passing criteria too).

mod support;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pilotrt::agent::{Agent, EngineAction};
use pilotrt::analytics::{makespan, max_concurrency, overhead, throughput, utilization, Window};
use pilotrt::config::{parse_config, rescale_time, FaultPlan, RunConfig};
use pilotrt::harness::{execute, plan_pilot, run_sim, sim_backends, RunResult};
use pilotrt::presets::{preset, preset_text};
use pilotrt::resources::NodeSpec;
use pilotrt::sim::SimClock;
use pilotrt::task::{
    serialize_log, validate_log, LogRecord, Modality, RecordState, TaskState,
};
use pilotrt::workloads::{generate_campaign, generate_uniform, WorkloadKind};

fn run_preset(name: &str) -> RunResult {
    let cfg = parse_config(preset_text(name).expect("known preset")).expect("preset parses");
    run_sim(&cfg).expect("run completes")
}

fn assert_clean(result: &RunResult, label: &str) {
    assert!(!result.timed_out, "{label}: run timed out");
    assert_eq!(result.pump_errors, 0, "{label}: registry rejected backend events");
    let violations = validate_log(result.registry.log());
    assert!(violations.is_empty(), "{label}: log violations: {violations:?}");
}

#[test]
fn a01_capped_plateau_utilization_makespan() {
    let wall = Instant::now();
    let result = run_preset("capped_4n");
    assert_clean(&result, "A1");
    let records = result.registry.log();
    let plateau = max_concurrency(records).unwrap();
    let util = utilization(records, 224, 0, Window::Net).unwrap().pct;
    let mk = makespan(records).unwrap().seconds;
    assert_eq!(plateau, support::expected::CAPPED_4N_PLATEAU);
    assert!(
        (util - support::expected::CAPPED_4N_UTILIZATION_PCT).abs() <= 0.01,
        "utilization {util}"
    );
    assert!(
        (mk - support::expected::CAPPED_4N_MAKESPAN_S).abs() <= 0.01,
        "makespan {mk}"
    );
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 5.0, "took {wall:.2} s");
    println!("A1 PASS: plateau={plateau} util={util:.3}% makespan={mk:.3}s wall={wall:.2}s");
}

#[test]
fn a02_hierarchical_fills_the_allocation() {
    let wall = Instant::now();
    let result = run_preset("hier_4n");
    assert_clean(&result, "A2");
    let records = result.registry.log();
    let plateau = max_concurrency(records).unwrap();
    let util = utilization(records, 224, 0, Window::Net).unwrap().pct;
    let mk = makespan(records).unwrap().seconds;
    let expect_mk =
        support::expected::UNCAPPED_4N_DRAIN_S + support::expected::BOOTSTRAP_HIER_S;
    assert_eq!(plateau, support::expected::UNCAPPED_4N_PLATEAU);
    assert!(util >= 99.5, "net utilization {util}");
    assert!((mk - expect_mk).abs() <= 1.0, "makespan {mk} vs {expect_mk}");
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 5.0, "took {wall:.2} s");
    println!("A2 PASS: plateau={plateau} util={util:.3}% makespan={mk:.3}s wall={wall:.2}s");
}

#[test]
fn a03_more_instances_raise_launch_throughput() {
    let wall = Instant::now();
    let one = run_preset("hier_4n_i1");
    let four = run_preset("hier_4n_i4");
    assert_clean(&one, "A3");
    assert_clean(&four, "A3");
    let avg_one = throughput(one.registry.log(), 1.0).unwrap().avg_per_s;
    let avg_four = throughput(four.registry.log(), 1.0).unwrap().avg_per_s;
    let ratio = avg_four / avg_one;
    assert!(ratio > 1.3, "ratio {ratio:.3} <= 1.3");
    assert!((1.1..=2.5).contains(&ratio), "ratio {ratio:.3} outside [1.1, 2.5]");
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 30.0, "took {wall:.2} s");
    println!(
        "A3 PASS: 1 instance {avg_one:.1}/s, 4 instances {avg_four:.1}/s, ratio {ratio:.3} \
         wall={wall:.2}s"
    );
}

#[test]
fn a04_hybrid_pilot_saturates_and_finishes_both_modalities() {
    let wall = Instant::now();
    let result = run_preset("hybrid_16n");
    assert_clean(&result, "A4");
    let util = utilization(result.registry.log(), 896, 0, Window::Net).unwrap().pct;
    assert!(util >= 99.6, "net utilization {util:.3}%");
    for modality in [Modality::Executable, Modality::Function] {
        let (total, done) = result
            .registry
            .tasks()
            .filter(|t| t.desc.modality == modality)
            .fold((0usize, 0usize), |(n, d), t| {
                (n + 1, d + usize::from(t.state == TaskState::Done))
            });
        assert!(total > 0, "{modality:?} tasks present");
        assert_eq!(done, total, "{modality:?}: {done}/{total} done");
    }
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 30.0, "took {wall:.2} s");
    println!("A4 PASS: util={util:.3}% both modalities fully done wall={wall:.2}s");
}

#[test]
fn a05_overheads_report_per_instance_and_concurrent_aggregate() {
    let wall = Instant::now();
    let result = run_preset("hybrid_16n");
    assert_clean(&result, "A5");
    let report = overhead(result.registry.log()).unwrap();
    assert_eq!(report.per_instance.len(), 8);
    for (id, seconds) in &report.per_instance {
        let expect = if id.starts_with("hier") {
            support::expected::BOOTSTRAP_HIER_S
        } else {
            support::expected::BOOTSTRAP_POOL_S
        };
        assert_eq!(*seconds, expect, "{id} overhead");
    }
    let sum: f64 = report.per_instance.values().sum();
    assert_eq!(report.aggregate_s, support::expected::HYBRID_AGG_OVERHEAD_S);
    assert_eq!(sum, 116.0, "per-instance overheads are intact");
    assert_ne!(report.aggregate_s, sum, "aggregate is concurrent, not additive");
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 10.0, "took {wall:.2} s");
    println!(
        "A5 PASS: hier=20.0s pool=9.0s aggregate={}s (sum would be {sum}s) wall={wall:.2}s",
        report.aggregate_s
    );
}

#[test]
fn a06_campaign_prefers_the_hierarchical_backend() {
    let wall = Instant::now();
    let capped = run_preset("campaign_256n_capped");
    let hier = run_preset("campaign_256n_hier");
    assert_clean(&capped, "A6");
    assert_clean(&hier, "A6");
    assert_eq!(capped.registry.len(), hier.registry.len(), "same generated campaign");
    let mk_capped = makespan(capped.registry.log()).unwrap().seconds;
    let mk_hier = makespan(hier.registry.log()).unwrap().seconds;
    let ratio = mk_hier / mk_capped;
    assert!(ratio <= 0.7, "hier/capped makespan ratio {ratio:.3} > 0.7");
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 60.0, "took {wall:.2} s");
    println!(
        "A6 PASS: capped {mk_capped:.1}s vs hier {mk_hier:.1}s, ratio {ratio:.3} wall={wall:.2}s"
    );
}

#[test]
fn a07_campaigns_scale_with_the_allocation() {
    let wall = Instant::now();
    let spec = NodeSpec { cores_per_node: 56, gpus_per_node: 8, smt: 1 };
    for nodes in [256u32, 1024] {
        let plan = generate_campaign(nodes, spec, 1).unwrap();
        let total = plan.total_tasks();
        let floor =
            (support::expected::CAMPAIGN_FLOOR_PER_128N as usize * nodes as usize).div_ceil(128);
        assert!(total >= floor, "{nodes} nodes: {total} tasks < floor {floor}");
    }
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 5.0, "took {wall:.2} s");
    println!("A7 PASS: campaign sizes clear the per-128-node floor at 256 and 1024 wall={wall:.2}s");
}

/// A full legal lifecycle for one synthetic task.
fn synthetic_chain(uid: &str, start: f64, end: f64, cores: u32) -> Vec<LogRecord> {
    vec![
        LogRecord::task(start, uid, TaskState::New, None, None, Some(format!("cores={cores} gpus=0"))),
        LogRecord::task(start, uid, TaskState::Scheduled, Some(0), Some("b0".into()), None),
        LogRecord::task(start, uid, TaskState::Submitted, Some(0), Some("b0".into()), None),
        LogRecord::task(start, uid, TaskState::Running, Some(0), Some("b0".into()), None),
        LogRecord::task(end, uid, TaskState::Done, Some(0), Some("b0".into()), None),
    ]
}

#[test]
fn a08_analytics_match_brute_force_oracles() {
    let wall = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA8);
    for case in 0..1000 {
        let n = rng.gen_range(1..=40);
        let tasks: Vec<(f64, f64, u32)> = (0..n)
            .map(|_| {
                let s = rng.gen_range(0.0..100.0);
                let d = rng.gen_range(0.001..20.0);
                (s, s + d, rng.gen_range(1..=8))
            })
            .collect();
        let mut records: Vec<LogRecord> = tasks
            .iter()
            .enumerate()
            .flat_map(|(i, &(s, e, c))| synthetic_chain(&format!("t{i:02}"), s, e, c))
            .collect();
        records.sort_by(|a, b| a.ts.total_cmp(&b.ts));
        assert!(validate_log(&records).is_empty(), "case {case}: synthetic log is legal");

        let busy = utilization(&records, 640, 0, Window::Net).unwrap().busy_core_s;
        let oracle_busy = support::busy_core_seconds_oracle(&tasks);
        assert!(
            support::rel_diff(busy, oracle_busy) <= 1e-9,
            "case {case}: busy {busy} vs oracle {oracle_busy}"
        );

        let conc = max_concurrency(&records).unwrap() as usize;
        let intervals: Vec<(f64, f64)> = tasks.iter().map(|&(s, e, _)| (s, e)).collect();
        let oracle_conc = support::max_concurrency_oracle(&intervals);
        assert_eq!(conc, oracle_conc, "case {case}: concurrency");

        let mk = makespan(&records).unwrap().seconds;
        let first = tasks.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
        let last = tasks.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
        assert!(
            support::rel_diff(mk, last - first) <= 1e-9,
            "case {case}: makespan {mk} vs {}",
            last - first
        );
    }
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 60.0, "took {wall:.2} s");
    println!("A8 PASS: 1000 random logs match the discretized oracles wall={wall:.2}s");
}

/// Random but valid small config: every family can appear, optional fault.
fn random_config(rng: &mut ChaCha8Rng) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.exp_id = "fuzz".to_string();
    cfg.nodes = rng.gen_range(1..=4);
    cfg.node_spec = NodeSpec {
        cores_per_node: rng.gen_range(4..=8),
        gpus_per_node: rng.gen_range(0..=2),
        smt: 1,
    };
    loop {
        cfg.capped_instances = rng.gen_range(0..=1);
        cfg.hierarchical_instances = rng.gen_range(0..=2);
        cfg.pool_instances = rng.gen_range(0..=2);
        let total = cfg.total_instances();
        if total >= 1 && total <= cfg.nodes {
            break;
        }
    }
    let has_exec = cfg.capped_instances + cfg.hierarchical_instances > 0;
    let has_pool = cfg.pool_instances > 0;
    cfg.workload.mix_func = match (has_exec, has_pool) {
        (true, true) => rng.gen_range(0..=4) as f64 / 4.0,
        (true, false) => 0.0,
        (false, true) => 1.0,
        (false, false) => unreachable!("at least one instance exists"),
    };
    cfg.workload.kind = if rng.gen_bool(0.3) {
        WorkloadKind::Null
    } else {
        WorkloadKind::Dummy { duration_s: rng.gen_range(0.5..30.0) }
    };
    cfg.workload.count = Some(rng.gen_range(8..=48));
    cfg.workload.seed = rng.gen();
    cfg.capped.cap = rng.gen_range(1..=16);
    cfg.hier_params.bootstrap_s = rng.gen_range(0.0..20.0);
    cfg.pool_params.bootstrap_s = rng.gen_range(0.0..10.0);
    if rng.gen_bool(0.25) {
        cfg.fault = Some(FaultPlan {
            instance: rng.gen_range(0..cfg.total_instances() as usize),
            at_s: rng.gen_range(1.0..20.0),
        });
    }
    cfg
}

#[test]
fn a09_invariants_hold_at_every_event_across_500_seeds() {
    let wall = Instant::now();
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = random_config(&mut rng);
        let plan = plan_pilot(&cfg).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let mut agent = Agent::new(cfg.agent.clone(), sim_backends(&cfg, &plan));
        let mut clock: SimClock<EngineAction> = SimClock::new();
        agent.start(0.0, &mut clock);
        if let Some(fault) = cfg.fault {
            clock
                .schedule_at(fault.at_s, EngineAction::Fault {
                    idx: fault.instance,
                    cause: "scripted fault".to_string(),
                })
                .unwrap();
        }
        for desc in generate_uniform(&cfg.workload, &plan.alloc).unwrap() {
            agent.enqueue(desc, 0.0, &mut clock).unwrap();
        }
        while clock.pending() > 0 {
            let batch = clock.advance().unwrap();
            for action in batch.actions {
                agent.handle(action, batch.now, &mut clock);
            }
            agent.pump(batch.now, &mut clock);
            // Slot conservation and friends, checked at every event batch.
            agent.audit().unwrap_or_else(|e| panic!("seed {seed} at t={}: {e}", batch.now));
        }
        assert!(agent.registry().all_terminal(), "seed {seed}: live tasks at quiescence");
        let records = agent.registry().log().to_vec();
        let violations = validate_log(&records);
        assert!(violations.is_empty(), "seed {seed}: {violations:?}");
        // Exactly one terminal record per submission.
        let mut terminals: std::collections::BTreeMap<&str, usize> = Default::default();
        for r in &records {
            if r.task_state().is_some_and(|s| s.is_terminal()) {
                *terminals.entry(r.uid.as_str()).or_default() += 1;
            }
        }
        for t in agent.registry().tasks() {
            assert_eq!(
                terminals.get(t.desc.uid.as_str()),
                Some(&1),
                "seed {seed}: task {} terminal count",
                t.desc.uid
            );
        }
        // Failure isolation: anything that died mid-run was running on the
        // faulted instance, never on a healthy one.
        if let Some(fault) = cfg.fault {
            let failed_instance = plan.instances[fault.instance].1.clone();
            let mut running_on: std::collections::BTreeMap<&str, &str> = Default::default();
            for r in &records {
                if r.task_state() == Some(TaskState::Running) {
                    running_on.insert(r.uid.as_str(), r.backend.as_deref().unwrap_or("-"));
                }
            }
            for r in &records {
                if r.task_state() == Some(TaskState::Failed) {
                    if let Some(&host) = running_on.get(r.uid.as_str()) {
                        assert_eq!(
                            host, failed_instance,
                            "seed {seed}: {} failed while running on a healthy instance",
                            r.uid
                        );
                    }
                }
            }
        }
    }
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 300.0, "took {wall:.2} s");
    println!("A9 PASS: 500 randomized runs keep every invariant wall={wall:.2}s");
}

#[test]
fn a10_runs_are_deterministic_and_time_scale_behaves() {
    let wall = Instant::now();
    let cfg = preset("hybrid_16n").unwrap().unwrap();
    let log_a = serialize_log(run_sim(&cfg).unwrap().registry.log());
    let log_b = serialize_log(run_sim(&cfg).unwrap().registry.log());
    assert_eq!(log_a, log_b, "same seed, same bytes");

    let base_cfg = preset("hier_4n").unwrap().unwrap();
    let base = run_sim(&base_cfg).unwrap();
    let mut compressed_cfg = preset("hier_4n").unwrap().unwrap();
    rescale_time(&mut compressed_cfg, 0.1).unwrap();
    let compressed = run_sim(&compressed_cfg).unwrap();
    let util_base = utilization(base.registry.log(), 224, 0, Window::Net).unwrap().pct;
    let util_comp = utilization(compressed.registry.log(), 224, 0, Window::Net).unwrap().pct;
    assert!(
        support::rel_diff(util_base, util_comp) <= 1e-9,
        "utilization drifted: {util_base} vs {util_comp}"
    );
    let thru_base = throughput(base.registry.log(), 1.0).unwrap().avg_per_s;
    let thru_comp = throughput(compressed.registry.log(), 0.1).unwrap().avg_per_s;
    let ratio = thru_comp / thru_base;
    assert!(
        ((ratio - 10.0) / 10.0).abs() <= 1e-6,
        "10x compression should give 10x throughput, got {ratio}"
    );
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 30.0, "took {wall:.2} s");
    println!(
        "A10 PASS: byte-identical replays; 10x time compression keeps util \
         ({util_base:.6}%) and scales throughput by {ratio:.9} wall={wall:.2}s"
    );
}

#[test]
fn a11_local_processes_run_the_smoke_preset_clean() {
    let wall = Instant::now();
    std::env::set_var("PILOTRT_WORKER", env!("CARGO_BIN_EXE_pilotrt-worker"));
    let cfg = preset("real_smoke").unwrap().unwrap();
    let result = execute(&cfg).unwrap();
    assert!(!result.timed_out, "A11: timed out");
    assert_eq!(result.pump_errors, 0);
    let (mut exec_done, mut func_done) = (0, 0);
    for t in result.registry.tasks() {
        assert_eq!(t.state, TaskState::Done, "{} ended {:?}", t.desc.uid, t.state);
        match t.desc.modality {
            Modality::Executable => exec_done += 1,
            Modality::Function => func_done += 1,
        }
    }
    assert_eq!((exec_done, func_done), (64, 64));
    let violations = validate_log(result.registry.log());
    assert!(violations.is_empty(), "A11: {violations:?}");
    // The pool's audited shutdown: its workers report how many children
    // they spawned, which must be none.
    let spawn_report = result
        .registry
        .log()
        .iter()
        .filter(|r| matches!(r.state, RecordState::Instance(_)))
        .filter(|r| r.backend.as_deref() == Some("pool0"))
        .find_map(|r| r.detail.clone());
    assert_eq!(spawn_report.as_deref(), Some("spawned=0"), "worker spawn audit");
    let wall = wall.elapsed().as_secs_f64();
    assert!(wall < 120.0, "took {wall:.2} s");
    println!(
        "A11 PASS: 64 executables + 64 functions all done, workers spawned nothing \
         wall={wall:.2}s"
    );
}
