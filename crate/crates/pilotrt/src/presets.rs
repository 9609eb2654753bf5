//! Bundled experiment presets, one per row of the evaluation matrix plus a
//! local-host smoke run. Each is ordinary config text; `pilotrt run <name>`
//! falls back to these when the argument is not a file on disk.

use crate::config::{parse_config, ConfigError, RunConfig};

/// Capped launcher on 4 nodes: 896 x 180 s single-core tasks against a
/// concurrency cap of 112. All latencies zeroed so the cap is the only
/// effect; the 50% utilization ceiling is arithmetic, not tuning.
const CAPPED_4N: &str = "\
# capped launcher, 4 nodes, 896x180s tasks, cap 112, zero latencies
exp_id = capped_4n
seed = 1

[allocation]
nodes = 4

[pilot]
capped_instances = 1

[capped]
cap = 112
launch_latency_s = 0
latency_per_node_s = 0
bootstrap_s = 0

[agent]
dispatch_latency_s = 0

[workload]
kind = dummy
duration_s = 180
";

/// The same 896-task workload on one hierarchical instance: no cap, so all
/// 224 cores fill. Pipeline latencies zeroed; the 20 s bootstrap is kept so
/// the makespan shows setup cost plus four clean 180 s waves.
const HIER_4N: &str = "\
# hierarchical queue, 4 nodes, same workload, no cap, 20s bootstrap
exp_id = hier_4n
seed = 1

[allocation]
nodes = 4

[pilot]
hierarchical_instances = 1

[hierarchical]
launch_latency_s = 0
bootstrap_s = 20

[agent]
dispatch_latency_s = 0

[workload]
kind = dummy
duration_s = 180
";

/// Null-body launch-rate probe, one hierarchical instance, default latencies.
const HIER_4N_I1: &str = "\
# launch-rate probe: null bodies through 1 hierarchical instance
exp_id = hier_4n_i1
seed = 1

[allocation]
nodes = 4

[pilot]
hierarchical_instances = 1

[workload]
kind = null
";

/// Same probe with four single-node instances; launching parallelizes while
/// the agent dispatch pipe stays shared.
const HIER_4N_I4: &str = "\
# launch-rate probe: null bodies through 4 hierarchical instances
exp_id = hier_4n_i4
seed = 1

[allocation]
nodes = 4

[pilot]
hierarchical_instances = 4

[workload]
kind = null
";

/// One worker pool spanning all 4 nodes, launching executables through
/// workers (no partitioning; exec routing points at the pool).
const POOL_4N: &str = "\
# worker pool spanning 4 nodes, null executables through workers
exp_id = pool_4n
seed = 1

[allocation]
nodes = 4

[pilot]
pool_instances = 1

[agent]
route_exec = workerpool

[workload]
kind = null
";

/// Hybrid pilot on 16 nodes: 4 hierarchical instances run executables, 4
/// pools run functions, default bootstraps (20 s / 9 s). One saturating
/// wave: 896 hour-long tasks on 896 cores, half of each modality.
const HYBRID_16N: &str = "\
# hybrid 4+4 pilot on 16 nodes, hour-long mixed-modality wave
exp_id = hybrid_16n
seed = 1

[allocation]
nodes = 16

[pilot]
hierarchical_instances = 4
pool_instances = 4

[workload]
kind = dummy
duration_s = 3600
count = 896
mix_func = 0.5
";

/// Six-stage campaign on 256 nodes through the capped launcher. Time scale
/// compresses the 180 s stage bodies so the run finishes in seconds.
const CAMPAIGN_256N_CAPPED: &str = "\
# six-stage campaign, 256 nodes, capped launcher, time scale 0.01
exp_id = campaign_256n_capped
seed = 1
time_scale = 0.01

[allocation]
nodes = 256

[pilot]
capped_instances = 1

[capped]
bootstrap_s = 0

[workload]
kind = campaign
";

/// The same campaign through one hierarchical instance.
const CAMPAIGN_256N_HIER: &str = "\
# six-stage campaign, 256 nodes, hierarchical queue, time scale 0.01
exp_id = campaign_256n_hier
seed = 1
time_scale = 0.01

[allocation]
nodes = 256

[pilot]
hierarchical_instances = 1

[workload]
kind = campaign
";

/// Local-host smoke run: 64 executables + 64 functions with empty bodies
/// through one hierarchical instance and one pool, real processes.
const REAL_SMOKE: &str = "\
# local processes: 64 executables + 64 functions with empty bodies
exp_id = real_smoke
mode = real
seed = 1
timeout_s = 110

[allocation]
nodes = 1

[pilot]
hierarchical_instances = 1
pool_instances = 1

[workload]
kind = null
count = 128
mix_func = 0.5
";

pub const PRESETS: [(&str, &str); 9] = [
    ("capped_4n", CAPPED_4N),
    ("hier_4n", HIER_4N),
    ("hier_4n_i1", HIER_4N_I1),
    ("hier_4n_i4", HIER_4N_I4),
    ("pool_4n", POOL_4N),
    ("hybrid_16n", HYBRID_16N),
    ("campaign_256n_capped", CAMPAIGN_256N_CAPPED),
    ("campaign_256n_hier", CAMPAIGN_256N_HIER),
    ("real_smoke", REAL_SMOKE),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|&(name, _)| name)
}

pub fn preset_text(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|&&(n, _)| n == name).map(|&(_, text)| text)
}

pub fn preset(name: &str) -> Option<Result<RunConfig, ConfigError>> {
    preset_text(name).map(parse_config)
}
