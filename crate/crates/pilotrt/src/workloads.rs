//! Workload generators: uniform single-core batches (null or fixed-duration
//! sleep bodies) and a staged six-stage drug-discovery-style campaign with a
//! runtime task-count adaptation rule. Generation is pure and seeded: the
//! same inputs always produce the same task list, uid for uid.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::resources::{Allocation, NodeSpec};
use crate::task::{DurationSpec, Modality, TaskDescription};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkloadKind {
    /// Empty bodies; measures pure runtime overhead.
    Null,
    /// Fixed-duration sleep bodies.
    Dummy { duration_s: f64 },
    Campaign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    /// Explicit task count; None means nodes x cores_per_node x 4.
    pub count: Option<usize>,
    /// Fraction of tasks dispatched as functions, the rest as executables.
    pub mix_func: f64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec { kind: WorkloadKind::Dummy { duration_s: 180.0 }, count: None, mix_func: 0.0, seed: 0 }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("mix_func {0} outside [0, 1]")]
    BadMix(f64),
    #[error("campaign stage `{stage}` needs {needed} {unit} but one node offers {have}")]
    InfeasibleStage { stage: &'static str, needed: u32, have: u32, unit: &'static str },
    #[error("campaign kind has its own generator")]
    WrongKind,
}

/// Default saturation count: four tasks per usable core.
pub fn saturation_count(alloc: &Allocation) -> usize {
    alloc.node_count as usize * alloc.spec.usable_cores() as usize * 4
}

/// Single-core tasks, modality-interleaved by seed. Null bodies get duration
/// zero; dummy bodies the configured sleep.
pub fn generate_uniform(
    spec: &WorkloadSpec,
    alloc: &Allocation,
) -> Result<Vec<TaskDescription>, WorkloadError> {
    if !(0.0..=1.0).contains(&spec.mix_func) {
        return Err(WorkloadError::BadMix(spec.mix_func));
    }
    let duration = match spec.kind {
        WorkloadKind::Null => DurationSpec::Null,
        WorkloadKind::Dummy { duration_s } => DurationSpec::Sleep(duration_s),
        WorkloadKind::Campaign => return Err(WorkloadError::WrongKind),
    };
    let n = spec.count.unwrap_or_else(|| saturation_count(alloc));
    let n_func = (n as f64 * spec.mix_func).round() as usize;
    let mut modalities = vec![Modality::Function; n_func];
    modalities.resize(n, Modality::Executable);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    modalities.shuffle(&mut rng);
    Ok(modalities
        .into_iter()
        .enumerate()
        .map(|(i, m)| TaskDescription::simple(format!("task-{i:06}"), m, duration))
        .collect())
}

/// One campaign stage's submission wave.
#[derive(Debug, Clone, PartialEq)]
pub struct StagePlan {
    pub name: &'static str,
    pub tasks: Vec<TaskDescription>,
    /// Stages the runtime may grow with filler tasks while they run.
    pub adaptive: bool,
    /// Generated size before any runtime growth.
    pub base_count: usize,
}

/// Staged campaign: stages submit in order, each gated on the previous one's
/// completion fraction (the harness owns that trigger).
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignPlan {
    pub stages: Vec<StagePlan>,
    pub nodes: u32,
    pub node_spec: NodeSpec,
}

impl CampaignPlan {
    pub fn total_tasks(&self) -> usize {
        self.stages.iter().map(|s| s.tasks.len()).sum()
    }
}

/// Minimum tasks per eligible stage: 102 per 128-node block, pro-rated.
pub fn stage_floor(nodes: u32) -> usize {
    ((102 * nodes as usize) + 127) / 128
}

/// Growth cap for an adaptive stage.
pub fn stage_ceiling(base_count: usize, nodes: u32) -> usize {
    (2 * base_count).max(stage_floor(nodes))
}

/// Campaign size target: anchored at 550 tasks for 256 nodes and 1800 for
/// 1024, linear between the anchors, proportional outside them.
fn campaign_budget(nodes: u32) -> f64 {
    let n = nodes as f64;
    if n <= 256.0 {
        550.0 * n / 256.0
    } else if n <= 1024.0 {
        550.0 + (1800.0 - 550.0) * (n - 256.0) / (1024.0 - 256.0)
    } else {
        1800.0 * n / 1024.0
    }
}

/// Proportions follow each stage's published node footprint.
const STAGE_SHARES: [(&str, u32); 6] = [
    ("docking", 128),
    ("sst", 4),
    ("inference", 128),
    ("scoring", 144),
    ("esmacs", 625),
    ("reinvent", 1),
];

const CAMPAIGN_BODY_S: f64 = 180.0;

fn sleep_task(uid: String, cores: u32, gpus: u32, span: Option<u32>) -> TaskDescription {
    TaskDescription {
        uid,
        modality: Modality::Executable,
        cores,
        gpus,
        duration: DurationSpec::Sleep(CAMPAIGN_BODY_S),
        payload: format!("sleep {CAMPAIGN_BODY_S}"),
        node_span: span,
    }
}

/// Extra 1-core task minted when an adaptive stage grows at runtime.
pub fn filler_task(stage: &str, idx: usize) -> TaskDescription {
    sleep_task(format!("{stage}-fill-{idx:05}"), 1, 0, None)
}

/// Six-stage synthetic campaign. Every task sleeps 180 s; shapes are drawn
/// per stage from seeded ranges. The first inference and scoring tasks are
/// pinned to the campaign's widest shapes (1024 GPUs / 7168 cores at full
/// scale) so the heterogeneity extremes always appear.
pub fn generate_campaign(
    nodes: u32,
    node_spec: NodeSpec,
    seed: u64,
) -> Result<CampaignPlan, WorkloadError> {
    let cpn = node_spec.usable_cores();
    let gpn = node_spec.gpus_per_node;
    if cpn < 56 {
        return Err(WorkloadError::InfeasibleStage {
            stage: "esmacs",
            needed: 56,
            have: cpn,
            unit: "cores",
        });
    }
    if gpn < 8 {
        return Err(WorkloadError::InfeasibleStage {
            stage: "reinvent",
            needed: 8,
            have: gpn,
            unit: "gpus",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = campaign_budget(nodes);
    let share_sum: u32 = STAGE_SHARES.iter().map(|&(_, s)| s).sum();
    let witness_span = nodes.min(128);
    let mut stages = Vec::with_capacity(STAGE_SHARES.len());
    for &(name, share) in &STAGE_SHARES {
        let count = ((budget * share as f64 / share_sum as f64).round() as usize).max(1);
        let mut tasks = Vec::with_capacity(count);
        for i in 0..count {
            let uid = format!("{name}-{i:05}");
            let t = match name {
                "docking" => sleep_task(uid, 1, 0, None),
                "sst" => {
                    let n = rng.gen_range(1..=4u32.min(nodes));
                    sleep_task(uid, n * cpn, n * gpn, Some(n))
                }
                "inference" => {
                    if i == 0 {
                        // Widest GPU shape: one core and all GPUs per node.
                        sleep_task(uid, witness_span, witness_span * gpn, Some(witness_span))
                    } else {
                        sleep_task(uid, 1, 1, None)
                    }
                }
                "scoring" => {
                    if i == 0 {
                        // Widest CPU shape: every core on the span.
                        sleep_task(uid, witness_span * cpn, 0, Some(witness_span))
                    } else {
                        let n = rng.gen_range(1..=8u32.min(nodes));
                        sleep_task(uid, n * cpn, 0, Some(n))
                    }
                }
                "esmacs" => {
                    let c = rng.gen_range(8..=56u32);
                    let g = rng.gen_range(0..=1u32);
                    sleep_task(uid, c, g, None)
                }
                "reinvent" => {
                    let c = rng.gen_range(28..=56u32);
                    let g = rng.gen_range(1..=8u32);
                    sleep_task(uid, c, g, None)
                }
                _ => unreachable!("stage table is fixed"),
            };
            tasks.push(t);
        }
        let adaptive = matches!(name, "docking" | "inference");
        stages.push(StagePlan { name, tasks, adaptive, base_count: count });
    }
    Ok(CampaignPlan { stages, nodes, node_spec })
}

/// How many filler tasks an adaptive stage should add right now. Zero free
/// cores add nothing; otherwise the stage jumps at least to its floor and
/// fills idle cores up to its ceiling.
pub fn adaptive_scale(free_cores: u32, stage: &StagePlan, current_count: usize, nodes: u32) -> usize {
    if !stage.adaptive || free_cores == 0 {
        return 0;
    }
    let floor = stage_floor(nodes);
    let ceiling = stage_ceiling(stage.base_count, nodes);
    let to_floor = floor.saturating_sub(current_count);
    let to_ceiling = ceiling.saturating_sub(current_count);
    to_floor.max((free_cores as usize).min(to_ceiling))
}
