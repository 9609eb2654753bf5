//! Expected values frozen before the runtime was implemented. Each constant
//! carries its derivation so a failure points at the model, not the test.
#![allow(dead_code)]

/// 4 nodes x 56 cores (smt 1) = 224 cores total.
pub const CORES_4N: u32 = 224;

/// Single-core task count for the saturation workloads: nodes x cores_per_node x 4.
/// 4 x 56 x 4 = 896.
pub const SATURATION_TASKS_4N: u32 = 896;

/// 64 x 56 x 4 = 14336.
pub const SATURATION_TASKS_64N: u32 = 14336;

/// Capped-launcher drain of 896 x 180 s single-core tasks under a hard cap of
/// 112 concurrent tasks and zero latencies: ceil(896/112) = 8 waves, each
/// exactly 180 s, so the drain takes 8 x 180 = 1440 s.
pub const CAPPED_4N_WAVES: u32 = 8;
pub const CAPPED_4N_MAKESPAN_S: f64 = 1440.0;

/// Busy core-seconds for that run: 896 tasks x 1 core x 180 s = 161280.
pub const SAT_4N_BUSY_CORE_S: f64 = 161_280.0;

/// Utilization over [first start, last terminal] = 161280 / (224 x 1440) = 50%.
pub const CAPPED_4N_UTILIZATION_PCT: f64 = 50.0;

/// Concurrency plateau equals the cap while more work is queued.
pub const CAPPED_4N_PLATEAU: u32 = 112;

/// Same workload with no cap on 224 free cores: plateau is the core count and
/// the drain takes ceil(896/224) = 4 waves x 180 s = 720 s after bootstrap.
pub const UNCAPPED_4N_PLATEAU: u32 = 224;
pub const UNCAPPED_4N_DRAIN_S: f64 = 720.0;

/// Default bootstrap model constants (seconds).
pub const BOOTSTRAP_HIER_S: f64 = 20.0;
pub const BOOTSTRAP_POOL_S: f64 = 9.0;

/// Concurrent bootstrap: aggregate overhead is the max over instances, so a
/// 4 + 4 hierarchical/worker-pool pilot reports 20 s, never 4x20 + 4x9 = 116 s.
pub const HYBRID_AGG_OVERHEAD_S: f64 = 20.0;

/// Throughput fixture: starts at {0, 0, 0.5, 1.2}, 1 s buckets.
/// avg = 4 / (1.2 - 0.0) = 10/3; series = [(0,3),(1,1)]; peak = 3/s.
pub const THROUGHPUT_FIXTURE_AVG: f64 = 4.0 / 1.2;
pub const THROUGHPUT_FIXTURE_PEAK: f64 = 3.0;

/// Campaign size anchors: ~550 tasks at 256 nodes, ~1800 at 1024, linear in
/// between and proportional outside; floor of 102 tasks per 128-node block.
pub const CAMPAIGN_TASKS_256N: f64 = 550.0;
pub const CAMPAIGN_TASKS_1024N: f64 = 1800.0;
pub const CAMPAIGN_FLOOR_PER_128N: u32 = 102;

/// Largest single task shape the campaign may emit.
pub const CAMPAIGN_MAX_CORES: u32 = 7168;
pub const CAMPAIGN_MAX_GPUS: u32 = 1024;
