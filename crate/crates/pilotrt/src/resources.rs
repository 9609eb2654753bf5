//! Resource model: node-homogeneous allocations, disjoint partitions, and a
//! per-partition slot ledger with first-fit placement.
//!
//! Conservation invariant: for every node, free + held == capacity at all
//! times. `check_conservation` verifies it and the sim harness can audit it
//! after every event.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::task::TaskDescription;

/// Per-node shape. `smt` multiplies schedulable core slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeSpec {
    pub cores_per_node: u32,
    pub gpus_per_node: u32,
    pub smt: u32,
}

impl Default for NodeSpec {
    fn default() -> Self {
        NodeSpec { cores_per_node: 56, gpus_per_node: 8, smt: 1 }
    }
}

impl NodeSpec {
    /// Schedulable core slots per node.
    pub fn usable_cores(&self) -> u32 {
        self.cores_per_node * self.smt.max(1)
    }
}

/// A pilot's resource grant: `node_count` identical nodes, ids 0..node_count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allocation {
    pub node_count: u32,
    pub spec: NodeSpec,
}

impl Allocation {
    pub fn new(node_count: u32, spec: NodeSpec) -> Self {
        Allocation { node_count, spec }
    }

    pub fn total_cores(&self) -> u32 {
        self.node_count * self.spec.usable_cores()
    }

    pub fn total_gpus(&self) -> u32 {
        self.node_count * self.spec.gpus_per_node
    }
}

/// Contiguous, disjoint slice of an allocation owned by one backend instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub id: u32,
    pub node_ids: Vec<u32>,
    pub spec: NodeSpec,
}

impl Partition {
    pub fn total_cores(&self) -> u32 {
        self.node_ids.len() as u32 * self.spec.usable_cores()
    }

    pub fn total_gpus(&self) -> u32 {
        self.node_ids.len() as u32 * self.spec.gpus_per_node
    }

    pub fn node_count(&self) -> u32 {
        self.node_ids.len() as u32
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("cannot split {nodes} nodes into {requested} partitions")]
    TooManyPartitions { nodes: u32, requested: u32 },
    #[error("partition count must be at least 1")]
    ZeroPartitions,
}

/// Split an allocation into `n` disjoint partitions of contiguous node ids.
/// Sizes differ by at most one; the remainder goes to the lowest-id
/// partitions.
pub fn partition_allocation(alloc: &Allocation, n: u32) -> Result<Vec<Partition>, PartitionError> {
    if n == 0 {
        return Err(PartitionError::ZeroPartitions);
    }
    if n > alloc.node_count {
        return Err(PartitionError::TooManyPartitions { nodes: alloc.node_count, requested: n });
    }
    let base = alloc.node_count / n;
    let rem = alloc.node_count % n;
    let mut parts = Vec::with_capacity(n as usize);
    let mut next = 0u32;
    for id in 0..n {
        let size = base + u32::from(id < rem);
        let node_ids: Vec<u32> = (next..next + size).collect();
        next += size;
        parts.push(Partition { id, node_ids, spec: alloc.spec });
    }
    Ok(parts)
}

/// What a task asks the slot map for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceRequest {
    pub cores: u32,
    pub gpus: u32,
    /// Spread over exactly this many nodes when set.
    pub node_span: Option<u32>,
}

impl From<&TaskDescription> for ResourceRequest {
    fn from(d: &TaskDescription) -> Self {
        ResourceRequest { cores: d.cores, gpus: d.gpus, node_span: d.node_span }
    }
}

/// Slots held by one task, per node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotAssignment {
    pub uid: String,
    /// (node id, cores, gpus) triples; every listed node contributes something.
    pub nodes: Vec<(u32, u32, u32)>,
}

impl SlotAssignment {
    pub fn cores(&self) -> u32 {
        self.nodes.iter().map(|&(_, c, _)| c).sum()
    }

    pub fn gpus(&self) -> u32 {
        self.nodes.iter().map(|&(_, _, g)| g).sum()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AcquireError {
    /// Fits the partition's capacity but not its current free state.
    #[error("request busy: fits capacity but not current free slots")]
    Busy,
    /// Can never fit this partition, even when idle.
    #[error("request can never fit this partition")]
    NeverFits,
    #[error("uid `{0}` already holds an assignment")]
    AlreadyHeld(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ReleaseError {
    #[error("no assignment held for uid `{0}`")]
    UnknownAssignment(String),
}

#[derive(Debug, Clone, Copy)]
struct NodeFree {
    node_id: u32,
    cores: u32,
    gpus: u32,
}

/// Free-slot tracker plus ledger of live assignments for one partition.
#[derive(Debug, Clone)]
pub struct SlotMap {
    spec: NodeSpec,
    free: Vec<NodeFree>,
    ledger: BTreeMap<String, SlotAssignment>,
}

impl SlotMap {
    pub fn for_partition(p: &Partition) -> Self {
        SlotMap {
            spec: p.spec,
            free: p
                .node_ids
                .iter()
                .map(|&node_id| NodeFree {
                    node_id,
                    cores: p.spec.usable_cores(),
                    gpus: p.spec.gpus_per_node,
                })
                .collect(),
            ledger: BTreeMap::new(),
        }
    }

    pub fn node_count(&self) -> u32 {
        self.free.len() as u32
    }

    pub fn total_cores(&self) -> u32 {
        self.node_count() * self.spec.usable_cores()
    }

    pub fn total_gpus(&self) -> u32 {
        self.node_count() * self.spec.gpus_per_node
    }

    pub fn free_cores(&self) -> u32 {
        self.free.iter().map(|n| n.cores).sum()
    }

    pub fn free_gpus(&self) -> u32 {
        self.free.iter().map(|n| n.gpus).sum()
    }

    pub fn held(&self) -> usize {
        self.ledger.len()
    }

    pub fn assignment(&self, uid: &str) -> Option<&SlotAssignment> {
        self.ledger.get(uid)
    }

    /// Capacity test ignoring current occupancy.
    pub fn fits_capacity(&self, req: &ResourceRequest) -> bool {
        if req.cores > self.total_cores() || req.gpus > self.total_gpus() {
            return false;
        }
        if let Some(span) = req.node_span {
            if span == 0 || span > self.node_count() {
                return false;
            }
            if req.cores.div_ceil(span) > self.spec.usable_cores() {
                return false;
            }
            if req.gpus.div_ceil(span) > self.spec.gpus_per_node {
                return false;
            }
        }
        true
    }

    /// Pure placement plan against the current free state; `None` = busy.
    fn plan(&self, req: &ResourceRequest) -> Option<Vec<(u32, u32, u32)>> {
        match req.node_span {
            Some(span) => self.plan_spanned(req, span),
            None => self.plan_packed(req),
        }
    }

    /// First fit ascending node id, filling each node before the next. A
    /// request may split across nodes whenever that lets it fit.
    fn plan_packed(&self, req: &ResourceRequest) -> Option<Vec<(u32, u32, u32)>> {
        let mut need_c = req.cores;
        let mut need_g = req.gpus;
        let mut picks = Vec::new();
        for node in &self.free {
            if need_c == 0 && need_g == 0 {
                break;
            }
            let take_c = need_c.min(node.cores);
            let take_g = need_g.min(node.gpus);
            if take_c > 0 || take_g > 0 {
                picks.push((node.node_id, take_c, take_g));
                need_c -= take_c;
                need_g -= take_g;
            }
        }
        (need_c == 0 && need_g == 0).then_some(picks)
    }

    /// Exactly `span` nodes, shares as even as possible, chosen first-fit in
    /// ascending node order.
    fn plan_spanned(&self, req: &ResourceRequest, span: u32) -> Option<Vec<(u32, u32, u32)>> {
        if span == 0 {
            return None;
        }
        let mut picks = Vec::with_capacity(span as usize);
        let mut left_nodes = span;
        let mut need_c = req.cores;
        let mut need_g = req.gpus;
        for node in &self.free {
            if left_nodes == 0 {
                break;
            }
            let share_c = need_c.div_ceil(left_nodes);
            let share_g = need_g.div_ceil(left_nodes);
            if node.cores >= share_c && node.gpus >= share_g {
                picks.push((node.node_id, share_c, share_g));
                need_c -= share_c;
                need_g -= share_g;
                left_nodes -= 1;
            }
        }
        (left_nodes == 0).then_some(picks)
    }

    /// Would the request succeed right now?
    pub fn can_place(&self, req: &ResourceRequest) -> bool {
        self.fits_capacity(req) && self.plan(req).is_some()
    }

    /// Do `node_id`'s free slots cover the whole request?
    pub fn can_place_on(&self, node_id: u32, req: &ResourceRequest) -> bool {
        self.free
            .iter()
            .find(|n| n.node_id == node_id)
            .is_some_and(|n| n.cores >= req.cores && n.gpus >= req.gpus)
    }

    /// Acquire the whole request on one specific node.
    pub fn acquire_on(
        &mut self,
        uid: &str,
        node_id: u32,
        req: &ResourceRequest,
    ) -> Result<SlotAssignment, AcquireError> {
        if self.ledger.contains_key(uid) {
            return Err(AcquireError::AlreadyHeld(uid.to_string()));
        }
        if req.cores > self.spec.usable_cores() || req.gpus > self.spec.gpus_per_node {
            return Err(AcquireError::NeverFits);
        }
        if !self.can_place_on(node_id, req) {
            return Err(AcquireError::Busy);
        }
        let node = self
            .free
            .iter_mut()
            .find(|n| n.node_id == node_id)
            .expect("can_place_on checked node exists");
        node.cores -= req.cores;
        node.gpus -= req.gpus;
        let assignment =
            SlotAssignment { uid: uid.to_string(), nodes: vec![(node_id, req.cores, req.gpus)] };
        self.ledger.insert(uid.to_string(), assignment.clone());
        Ok(assignment)
    }

    pub fn acquire(&mut self, uid: &str, req: &ResourceRequest) -> Result<SlotAssignment, AcquireError> {
        if self.ledger.contains_key(uid) {
            return Err(AcquireError::AlreadyHeld(uid.to_string()));
        }
        if !self.fits_capacity(req) {
            return Err(AcquireError::NeverFits);
        }
        let picks = self.plan(req).ok_or(AcquireError::Busy)?;
        for &(node_id, c, g) in &picks {
            let node = self
                .free
                .iter_mut()
                .find(|n| n.node_id == node_id)
                .expect("planned node exists");
            node.cores -= c;
            node.gpus -= g;
        }
        let assignment = SlotAssignment { uid: uid.to_string(), nodes: picks };
        self.ledger.insert(uid.to_string(), assignment.clone());
        Ok(assignment)
    }

    pub fn release(&mut self, uid: &str) -> Result<SlotAssignment, ReleaseError> {
        let assignment = self
            .ledger
            .remove(uid)
            .ok_or_else(|| ReleaseError::UnknownAssignment(uid.to_string()))?;
        for &(node_id, c, g) in &assignment.nodes {
            let node = self
                .free
                .iter_mut()
                .find(|n| n.node_id == node_id)
                .expect("ledger references known node");
            node.cores += c;
            node.gpus += g;
            debug_assert!(node.cores <= self.spec.usable_cores());
            debug_assert!(node.gpus <= self.spec.gpus_per_node);
        }
        Ok(assignment)
    }

    /// Verify free + held == capacity on every node.
    pub fn check_conservation(&self) -> Result<(), String> {
        let mut held_c: BTreeMap<u32, u32> = BTreeMap::new();
        let mut held_g: BTreeMap<u32, u32> = BTreeMap::new();
        for assignment in self.ledger.values() {
            for &(node_id, c, g) in &assignment.nodes {
                *held_c.entry(node_id).or_default() += c;
                *held_g.entry(node_id).or_default() += g;
            }
        }
        for node in &self.free {
            let hc = held_c.get(&node.node_id).copied().unwrap_or(0);
            let hg = held_g.get(&node.node_id).copied().unwrap_or(0);
            if node.cores + hc != self.spec.usable_cores() {
                return Err(format!(
                    "node {}: free {} + held {} != capacity {}",
                    node.node_id,
                    node.cores,
                    hc,
                    self.spec.usable_cores()
                ));
            }
            if node.gpus + hg != self.spec.gpus_per_node {
                return Err(format!(
                    "node {}: free {} + held {} != gpu capacity {}",
                    node.node_id, node.gpus, hg, self.spec.gpus_per_node
                ));
            }
        }
        Ok(())
    }
}
