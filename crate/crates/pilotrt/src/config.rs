//! Experiment configuration. The on-disk format is flat `key = value` text
//! with optional `[section]` headers that prefix the keys that follow, `#`
//! comments, and a fixed key set: unknown or duplicate keys are errors, and
//! every key has a default so an empty file is a valid (if tiny) experiment.
//!
//! `time_scale` is applied once, at load: every configured time quantity
//! (latencies, bootstraps, epsilons, durations, fault times) comes out of
//! `load_config`/`parse_config` already multiplied. Task bodies generated
//! outside the config (campaign stages) are scaled at generation instead.

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::agent::{AgentConfig, SelectionPolicy};
use crate::backend::{BackendFamily, BackendParams};
use crate::backends::capped::CappedConfig;
use crate::backends::hierarchical::{HierConfig, QueuePolicy};
use crate::backends::workerpool::WorkerpoolConfig;
use crate::resources::NodeSpec;
use crate::workloads::{WorkloadKind, WorkloadSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Sim,
    Real,
}

/// One scripted instance failure, fired from a timer mid-run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaultPlan {
    pub instance: usize,
    pub at_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub exp_id: String,
    pub mode: Mode,
    pub nodes: u32,
    pub node_spec: NodeSpec,
    pub capped_instances: u32,
    pub hierarchical_instances: u32,
    pub pool_instances: u32,
    pub capped: CappedConfig,
    pub capped_params: BackendParams,
    pub hier: HierConfig,
    pub hier_params: BackendParams,
    pub pool: WorkerpoolConfig,
    pub pool_params: BackendParams,
    pub agent: AgentConfig,
    pub workload: WorkloadSpec,
    /// Completion fraction of a campaign stage that releases the next stage.
    pub stage_fraction: f64,
    /// Grow eligible campaign stages while cores idle.
    pub adaptive: bool,
    pub fault: Option<FaultPlan>,
    pub time_scale: f64,
    pub seed: u64,
    /// Run guard: modeled seconds in SIM, wall seconds in REAL. Not scaled.
    pub timeout_s: f64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn total_instances(&self) -> u32 {
        self.capped_instances + self.hierarchical_instances + self.pool_instances
    }

    /// Families with at least one configured instance.
    pub fn present_families(&self) -> Vec<BackendFamily> {
        let mut out = Vec::new();
        if self.capped_instances > 0 {
            out.push(BackendFamily::Capped);
        }
        if self.hierarchical_instances > 0 {
            out.push(BackendFamily::Hierarchical);
        }
        if self.pool_instances > 0 {
            out.push(BackendFamily::Workerpool);
        }
        out
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            exp_id: "exp".to_string(),
            mode: Mode::Sim,
            nodes: 4,
            node_spec: NodeSpec::default(),
            capped_instances: 0,
            hierarchical_instances: 0,
            pool_instances: 0,
            capped: CappedConfig::default(),
            capped_params: BackendParams { bootstrap_s: 0.0, startup_timeout_s: 60.0 },
            hier: HierConfig::default(),
            hier_params: BackendParams { bootstrap_s: 20.0, startup_timeout_s: 60.0 },
            pool: WorkerpoolConfig::default(),
            pool_params: BackendParams { bootstrap_s: 9.0, startup_timeout_s: 60.0 },
            agent: AgentConfig::default(),
            workload: WorkloadSpec::default(),
            stage_fraction: 1.0,
            adaptive: true,
            fault: None,
            time_scale: 1.0,
            seed: 0,
            timeout_s: 86_400.0,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("invalid configuration: {0}")]
    Invariant(String),
}

fn parse_err(line: usize, reason: impl Into<String>) -> ConfigError {
    ConfigError::Parse { line, reason: reason.into() }
}

/// Core count of the local host, for REAL mode defaults.
pub fn detected_cores() -> u32 {
    std::thread::available_parallelism().map(|n| n.get() as u32).unwrap_or(1)
}

pub fn load_config(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// One `key = value` line mid-parse; the typed accessors hang off it so
/// error messages carry the line and key without threading them around.
#[derive(Clone, Copy)]
struct Ctx<'a> {
    line_no: usize,
    key: &'a str,
    value: &'a str,
}

impl Ctx<'_> {
    fn f64(&self) -> Result<f64, ConfigError> {
        let v: f64 = self
            .value
            .parse()
            .map_err(|_| parse_err(self.line_no, format!("`{}` wants a number, got `{}`", self.key, self.value)))?;
        if !v.is_finite() {
            return Err(parse_err(self.line_no, format!("`{}` must be finite", self.key)));
        }
        Ok(v)
    }

    fn seconds(&self) -> Result<f64, ConfigError> {
        let v = self.f64()?;
        if v < 0.0 {
            return Err(parse_err(self.line_no, format!("`{}` cannot be negative", self.key)));
        }
        Ok(v)
    }

    fn u32(&self) -> Result<u32, ConfigError> {
        self.value
            .parse()
            .map_err(|_| parse_err(self.line_no, format!("`{}` wants a whole number, got `{}`", self.key, self.value)))
    }

    fn u64(&self) -> Result<u64, ConfigError> {
        self.value
            .parse()
            .map_err(|_| parse_err(self.line_no, format!("`{}` wants a whole number, got `{}`", self.key, self.value)))
    }

    fn bool(&self) -> Result<bool, ConfigError> {
        match self.value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(parse_err(self.line_no, format!("`{}` wants true or false", self.key))),
        }
    }

    fn auto_u32(&self) -> Result<Option<u32>, ConfigError> {
        if self.value == "auto" {
            Ok(None)
        } else {
            self.u32().map(Some)
        }
    }

    fn families(&self) -> Result<Vec<BackendFamily>, ConfigError> {
        self.value
            .split(',')
            .map(|part| match part.trim() {
                "capped" => Ok(BackendFamily::Capped),
                "hierarchical" => Ok(BackendFamily::Hierarchical),
                "workerpool" => Ok(BackendFamily::Workerpool),
                other => Err(parse_err(
                    self.line_no,
                    format!("`{}`: unknown backend family `{other}`", self.key),
                )),
            })
            .collect()
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut section = String::new();
    // Dummy-kind duration arrives via its own key; stitch it in afterwards.
    let mut duration_s = 180.0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| parse_err(line_no, "unterminated [section] header"))?;
            section = name.trim().to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, "expected `key = value`"))?;
        let full_key = if section.is_empty() {
            key.trim().to_string()
        } else {
            format!("{section}.{}", key.trim())
        };
        if !seen.insert(full_key.clone()) {
            return Err(parse_err(line_no, format!("duplicate key `{full_key}`")));
        }
        let p = Ctx { line_no, key: &full_key, value: value.trim() };
        let c = &mut cfg;
        match full_key.as_str() {
            "exp_id" => c.exp_id = p.value.to_string(),
            "mode" => {
                c.mode = match p.value {
                    "sim" => Mode::Sim,
                    "real" => Mode::Real,
                    other => {
                        return Err(parse_err(p.line_no, format!("mode must be sim or real, got `{other}`")))
                    }
                }
            }
            "seed" => c.seed = p.u64()?,
            "time_scale" => c.time_scale = p.f64()?,
            "timeout_s" => c.timeout_s = p.seconds()?,
            "output_dir" => c.output_dir = PathBuf::from(p.value),
            "allocation.nodes" => c.nodes = p.u32()?,
            "allocation.cores_per_node" => c.node_spec.cores_per_node = p.u32()?,
            "allocation.gpus_per_node" => c.node_spec.gpus_per_node = p.u32()?,
            "allocation.smt" => c.node_spec.smt = p.u32()?,
            "pilot.capped_instances" => c.capped_instances = p.u32()?,
            "pilot.hierarchical_instances" => c.hierarchical_instances = p.u32()?,
            "pilot.pool_instances" => c.pool_instances = p.u32()?,
            "capped.cap" => c.capped.cap = p.u32()?,
            "capped.launch_latency_s" => c.capped.launch_latency_s = p.seconds()?,
            "capped.latency_per_node_s" => c.capped.latency_per_node_s = p.seconds()?,
            "capped.zero_eps_s" => c.capped.zero_eps_s = p.seconds()?,
            "capped.bootstrap_s" => c.capped_params.bootstrap_s = p.seconds()?,
            "capped.startup_timeout_s" => c.capped_params.startup_timeout_s = p.seconds()?,
            "hierarchical.policy" => {
                c.hier.policy = match p.value {
                    "fcfs" => QueuePolicy::Fcfs,
                    "backfill" => QueuePolicy::FcfsBackfill,
                    other => {
                        return Err(parse_err(p.line_no, format!("policy must be fcfs or backfill, got `{other}`")))
                    }
                }
            }
            "hierarchical.launch_latency_s" => c.hier.launch_latency_s = p.seconds()?,
            "hierarchical.zero_eps_s" => c.hier.zero_eps_s = p.seconds()?,
            "hierarchical.bootstrap_s" => c.hier_params.bootstrap_s = p.seconds()?,
            "hierarchical.startup_timeout_s" => c.hier_params.startup_timeout_s = p.seconds()?,
            "pool.workers_per_node" => c.pool.workers_per_node = p.auto_u32()?,
            "pool.channel_latency_s" => c.pool.channel_latency_s = p.seconds()?,
            "pool.spawn_latency_s" => c.pool.spawn_latency_s = p.seconds()?,
            "pool.zero_eps_s" => c.pool.zero_eps_s = p.seconds()?,
            "pool.bootstrap_s" => c.pool_params.bootstrap_s = p.seconds()?,
            "pool.startup_timeout_s" => c.pool_params.startup_timeout_s = p.seconds()?,
            "agent.dispatch_latency_s" => c.agent.dispatch_latency_s = p.seconds()?,
            "agent.depth_factor" => c.agent.depth_factor = p.u32()?,
            "agent.max_retries" => c.agent.max_retries = p.u32()?,
            "agent.selection" => {
                c.agent.selection = match p.value {
                    "round_robin" => SelectionPolicy::RoundRobin,
                    "least_loaded" => SelectionPolicy::LeastLoaded,
                    other => {
                        return Err(parse_err(
                            p.line_no,
                            format!("selection must be round_robin or least_loaded, got `{other}`"),
                        ))
                    }
                }
            }
            "agent.route_exec" => c.agent.route_exec = p.families()?,
            "agent.route_func" => c.agent.route_func = p.families()?,
            "workload.kind" => {
                c.workload.kind = match p.value {
                    "null" => WorkloadKind::Null,
                    "dummy" => WorkloadKind::Dummy { duration_s },
                    "campaign" => WorkloadKind::Campaign,
                    other => {
                        return Err(parse_err(
                            p.line_no,
                            format!("kind must be null, dummy, or campaign, got `{other}`"),
                        ))
                    }
                }
            }
            "workload.duration_s" => duration_s = p.seconds()?,
            "workload.count" => c.workload.count = p.auto_u32()?.map(|n| n as usize),
            "workload.mix_func" => c.workload.mix_func = p.f64()?,
            "workload.seed" => c.workload.seed = p.u64()?,
            "campaign.stage_fraction" => c.stage_fraction = p.f64()?,
            "campaign.adaptive" => c.adaptive = p.bool()?,
            "fault.instance" => {
                let idx = p.u32()? as usize;
                c.fault = Some(FaultPlan { instance: idx, at_s: c.fault.map_or(0.0, |f| f.at_s) });
            }
            "fault.at_s" => {
                let at = p.seconds()?;
                c.fault = Some(FaultPlan { instance: c.fault.map_or(0, |f| f.instance), at_s: at });
            }
            _ => return Err(ConfigError::UnknownKey { line: p.line_no, key: full_key }),
        }
    }
    if let WorkloadKind::Dummy { duration_s: d } = &mut cfg.workload.kind {
        *d = duration_s;
    }
    if !seen.contains("workload.seed") {
        cfg.workload.seed = cfg.seed;
    }
    finish(cfg, &seen)
}

/// Fill mode-dependent defaults, check invariants, apply the time scale.
fn finish(mut cfg: RunConfig, seen: &BTreeSet<String>) -> Result<RunConfig, ConfigError> {
    if cfg.time_scale <= 0.0 {
        return Err(ConfigError::Invariant(format!("time_scale {} must be > 0", cfg.time_scale)));
    }
    if cfg.mode == Mode::Real {
        if cfg.nodes != 1 {
            return Err(ConfigError::Invariant(format!(
                "real mode runs on the local host only: allocation.nodes must be 1, got {}",
                cfg.nodes
            )));
        }
        if cfg.time_scale != 1.0 {
            return Err(ConfigError::Invariant("time_scale applies to sim mode only".into()));
        }
        if !seen.contains("allocation.cores_per_node") {
            cfg.node_spec.cores_per_node = detected_cores();
        }
        if !seen.contains("allocation.gpus_per_node") {
            cfg.node_spec.gpus_per_node = 0;
        }
        if !seen.contains("allocation.smt") {
            cfg.node_spec.smt = 1;
        }
    }
    if cfg.nodes == 0 {
        return Err(ConfigError::Invariant("allocation.nodes must be at least 1".into()));
    }
    if cfg.node_spec.cores_per_node == 0 {
        return Err(ConfigError::Invariant("allocation.cores_per_node must be at least 1".into()));
    }
    if cfg.total_instances() == 0 {
        return Err(ConfigError::Invariant("configure at least one backend instance".into()));
    }
    if cfg.mode == Mode::Sim && cfg.total_instances() > cfg.nodes {
        return Err(ConfigError::Invariant(format!(
            "{} instances cannot each own a node out of {}",
            cfg.total_instances(),
            cfg.nodes
        )));
    }
    if cfg.capped_instances > 0 && cfg.capped.cap == 0 {
        return Err(ConfigError::Invariant("capped.cap must be at least 1".into()));
    }
    if cfg.agent.depth_factor == 0 {
        return Err(ConfigError::Invariant("agent.depth_factor must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.workload.mix_func) {
        return Err(ConfigError::Invariant(format!(
            "workload.mix_func {} outside [0, 1]",
            cfg.workload.mix_func
        )));
    }
    if !(cfg.stage_fraction > 0.0 && cfg.stage_fraction <= 1.0) {
        return Err(ConfigError::Invariant(format!(
            "campaign.stage_fraction {} outside (0, 1]",
            cfg.stage_fraction
        )));
    }
    if let Some(fault) = cfg.fault {
        if fault.instance >= cfg.total_instances() as usize {
            return Err(ConfigError::Invariant(format!(
                "fault.instance {} out of range for {} instances",
                fault.instance,
                cfg.total_instances()
            )));
        }
    }
    // Every modality the workload produces needs a routable family present.
    let present = cfg.present_families();
    let has_exec = cfg.workload.kind == WorkloadKind::Campaign || cfg.workload.mix_func < 1.0;
    let has_func = cfg.workload.kind != WorkloadKind::Campaign && cfg.workload.mix_func > 0.0;
    if has_exec && !cfg.agent.route_exec.iter().any(|f| present.contains(f)) {
        return Err(ConfigError::Invariant(
            "executable tasks have no routable backend instance".into(),
        ));
    }
    if has_func && !cfg.agent.route_func.iter().any(|f| present.contains(f)) {
        return Err(ConfigError::Invariant(
            "function tasks have no routable backend instance".into(),
        ));
    }
    apply_time_scale(&mut cfg);
    Ok(cfg)
}

fn apply_time_scale(cfg: &mut RunConfig) {
    let k = cfg.time_scale;
    scale_times(cfg, k);
}

/// Change the time scale of an already-loaded config, rescaling every
/// quantity the loader scaled. Lets callers override the scale without
/// re-reading the source text.
pub fn rescale_time(cfg: &mut RunConfig, new_scale: f64) -> Result<(), ConfigError> {
    if !(new_scale > 0.0) || !new_scale.is_finite() {
        return Err(ConfigError::Invariant(format!("time_scale must be positive, got {new_scale}")));
    }
    if cfg.mode == Mode::Real && new_scale != 1.0 {
        return Err(ConfigError::Invariant(
            "real mode runs on the wall clock; time_scale must stay 1.0".to_string(),
        ));
    }
    let ratio = new_scale / cfg.time_scale;
    scale_times(cfg, ratio);
    cfg.time_scale = new_scale;
    Ok(())
}

fn scale_times(cfg: &mut RunConfig, k: f64) {
    if k == 1.0 {
        return;
    }
    for params in [&mut cfg.capped_params, &mut cfg.hier_params, &mut cfg.pool_params] {
        params.bootstrap_s *= k;
        params.startup_timeout_s *= k;
    }
    cfg.capped.launch_latency_s *= k;
    cfg.capped.latency_per_node_s *= k;
    cfg.capped.zero_eps_s *= k;
    cfg.hier.launch_latency_s *= k;
    cfg.hier.zero_eps_s *= k;
    cfg.pool.channel_latency_s *= k;
    cfg.pool.spawn_latency_s *= k;
    cfg.pool.zero_eps_s *= k;
    cfg.agent.dispatch_latency_s *= k;
    if let WorkloadKind::Dummy { duration_s } = &mut cfg.workload.kind {
        *duration_s *= k;
    }
    if let Some(fault) = &mut cfg.fault {
        fault.at_s *= k;
    }
}
