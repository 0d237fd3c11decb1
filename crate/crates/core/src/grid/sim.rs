use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::ids::{BeadId, ChannelId, NodeId};
use crate::memory::NodeRegion;
use crate::tapestry::Tapestry;

use super::island::{identify_islands, transfer_island, IslandMap};
use super::partition::partition_address_space;
use super::transport::{EndpointState, LinkParams, Transport, TransportConfig};

/// A logical communication endpoint. Channels connect ranks; ranks are
/// bound to physical nodes and can be rebound.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rank(pub u32);

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub total_bits: u32,
    pub vm_bits: u32,
    /// Nodes per compartment. Islands may not move between compartments.
    pub compartment: Option<u32>,
    pub transport: TransportConfig,
    /// Runtime steps each node executes per tick.
    pub steps_per_tick: u64,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            total_bits: 64,
            vm_bits: 40,
            compartment: None,
            transport: TransportConfig::default(),
            steps_per_tick: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GridEventKind {
    Checkpoint(String),
    /// Restore a named checkpoint, placing each saved node at
    /// `remap[node]` (identity for nodes not listed).
    Restore {
        label: String,
        remap: BTreeMap<NodeId, NodeId>,
    },
    Kill(NodeId),
    Migrate {
        beads: BTreeSet<BeadId>,
        from: NodeId,
        to: NodeId,
    },
    Link(LinkParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridEvent {
    pub tick: u64,
    pub kind: GridEventKind,
}

/// Saved node tapestries and transport endpoints. Messages in flight when
/// the checkpoint is taken are not part of it.
#[derive(Clone)]
pub struct GridCheckpoint {
    pub tick: u64,
    pub nodes: BTreeMap<NodeId, Tapestry>,
    pub ranks: BTreeMap<Rank, NodeId>,
    pub endpoints: EndpointState,
    /// Packets that were in flight and are therefore lost on restore.
    pub discarded: usize,
}

#[derive(Clone)]
pub struct Grid {
    config: GridConfig,
    max_nodes: u64,
    nodes: BTreeMap<NodeId, Tapestry>,
    ranks: BTreeMap<Rank, NodeId>,
    transport: Transport,
    events: Vec<GridEvent>,
    saved: BTreeMap<String, GridCheckpoint>,
    tick: u64,
    log: Vec<String>,
}

impl Grid {
    pub fn new(config: GridConfig) -> Result<Self> {
        let (_, max_nodes) = partition_address_space(config.total_bits, config.vm_bits)?;
        let transport = Transport::new(config.transport, config.seed);
        Ok(Grid {
            config,
            max_nodes,
            nodes: BTreeMap::new(),
            ranks: BTreeMap::new(),
            transport,
            events: Vec::new(),
            saved: BTreeMap::new(),
            tick: 0,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    fn region(&self, node: NodeId) -> Result<NodeRegion> {
        if node.0 as u64 >= self.max_nodes {
            return Err(Error::InvalidArgument(format!("{node} exceeds the node count")));
        }
        Ok(NodeRegion::for_node(node, self.config.vm_bits))
    }

    /// Add an empty node owning its slice of the address space.
    pub fn add_node(&mut self, node: NodeId) -> Result<&mut Tapestry> {
        if self.nodes.contains_key(&node) {
            return Err(Error::InvalidArgument(format!("{node} already exists")));
        }
        let t = Tapestry::new(self.region(node)?);
        Ok(self.nodes.entry(node).or_insert(t))
    }

    pub fn node(&self, node: NodeId) -> Result<&Tapestry> {
        self.nodes
            .get(&node)
            .ok_or_else(|| Error::InvalidArgument(format!("no node {node}")))
    }

    pub fn node_mut(&mut self, node: NodeId) -> Result<&mut Tapestry> {
        self.nodes
            .get_mut(&node)
            .ok_or_else(|| Error::InvalidArgument(format!("no node {node}")))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Tapestry)> {
        self.nodes.iter().map(|(k, v)| (*k, v))
    }

    pub fn bind_rank(&mut self, rank: Rank, node: NodeId) {
        self.ranks.insert(rank, node);
    }

    pub fn rank_node(&self, rank: Rank) -> Option<NodeId> {
        self.ranks.get(&rank).copied()
    }

    pub fn open_channel(&mut self, ch: ChannelId, from: Rank, to: Rank) {
        self.transport.open_channel(ch, from, to);
    }

    pub fn transport(&self) -> &Transport {
        &self.transport
    }

    pub fn transport_mut(&mut self) -> &mut Transport {
        &mut self.transport
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    pub fn schedule(&mut self, event: GridEvent) {
        self.events.push(event);
        self.events.sort_by_key(|e| e.tick);
    }

    pub fn saved(&self, label: &str) -> Option<&GridCheckpoint> {
        self.saved.get(label)
    }

    /// True when node regions do not overlap and no cell address is held by
    /// more than one node.
    pub fn regions_disjoint(&self) -> bool {
        let mut seen = BTreeSet::new();
        for t in self.nodes.values() {
            if !t.memory().cells().keys().all(|a| seen.insert(*a)) {
                return false;
            }
        }
        let regions: Vec<&NodeRegion> = self.nodes.values().map(|t| t.memory().region()).collect();
        for (i, a) in regions.iter().enumerate() {
            for b in &regions[i + 1..] {
                let (a0, a1) = (a.base as u128, a.base as u128 + a.extent as u128);
                let (b0, b1) = (b.base as u128, b.base as u128 + b.extent as u128);
                if a0 < b1 && b0 < a1 {
                    return false;
                }
            }
        }
        true
    }

    pub fn done(&self) -> bool {
        self.nodes.values().all(|t| t.all_done())
    }

    /// Capture node images and transport endpoints. In-flight messages are
    /// deliberately left out.
    pub fn partial_checkpoint(&self) -> GridCheckpoint {
        GridCheckpoint {
            tick: self.tick,
            nodes: self.nodes.clone(),
            ranks: self.ranks.clone(),
            endpoints: self.transport.endpoints(),
            discarded: self.transport.in_flight(),
        }
    }

    /// Reinstate a checkpoint, optionally on differently numbered nodes.
    /// A node image keeps its original address region wherever it lands.
    pub fn restore(&mut self, cp: &GridCheckpoint, remap: &BTreeMap<NodeId, NodeId>) -> Result<()> {
        let place = |n: NodeId| remap.get(&n).copied().unwrap_or(n);
        let mut nodes = BTreeMap::new();
        for (n, t) in &cp.nodes {
            let to = place(*n);
            self.region(to)?;
            if nodes.insert(to, t.clone()).is_some() {
                return Err(Error::InvalidArgument(format!("two nodes mapped onto {to}")));
            }
        }
        self.nodes = nodes;
        self.ranks = cp.ranks.iter().map(|(r, n)| (*r, place(*n))).collect();
        self.transport.restore_endpoints(cp.endpoints.clone());
        Ok(())
    }

    /// Move a closed island of beads between nodes. Addresses survive the
    /// move; crossing a compartment boundary is refused.
    pub fn migrate_island(&mut self, beads: &BTreeSet<BeadId>, from: NodeId, to: NodeId) -> Result<IslandMap> {
        if from == to {
            return Err(Error::InvalidArgument("source and destination coincide".into()));
        }
        if let Some(c) = self.config.compartment {
            if from.0 / c.max(1) != to.0 / c.max(1) {
                return Err(Error::RegionOverflow);
            }
        }
        let mut src = self
            .nodes
            .remove(&from)
            .ok_or_else(|| Error::InvalidArgument(format!("no node {from}")))?;
        let result = (|| {
            let island = identify_islands(&src, Some(core::slice::from_ref(beads)))?.remove(0);
            let dst = self
                .nodes
                .get_mut(&to)
                .ok_or_else(|| Error::InvalidArgument(format!("no node {to}")))?;
            transfer_island(&mut src, dst, &island)
        })();
        self.nodes.insert(from, src);
        result
    }

    fn apply(&mut self, kind: GridEventKind) -> Result<()> {
        match kind {
            GridEventKind::Checkpoint(label) => {
                let cp = self.partial_checkpoint();
                self.log.push(format!(
                    "tick={} checkpoint={label} discarded={}",
                    self.tick, cp.discarded
                ));
                self.saved.insert(label, cp);
            }
            GridEventKind::Restore { label, remap } => {
                let cp = self
                    .saved
                    .get(&label)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("no grid checkpoint `{label}`")))?;
                self.restore(&cp, &remap)?;
                self.log.push(format!("tick={} restore={label}", self.tick));
            }
            GridEventKind::Kill(node) => {
                self.nodes.remove(&node);
                for (r, n) in &self.ranks {
                    if *n == node {
                        self.transport.set_down(*r, true);
                    }
                }
                self.log.push(format!("tick={} kill={node}", self.tick));
            }
            GridEventKind::Migrate { beads, from, to } => {
                self.migrate_island(&beads, from, to)?;
                self.log.push(format!("tick={} migrate {from}->{to}", self.tick));
            }
            GridEventKind::Link(link) => self.transport.set_link(link),
        }
        Ok(())
    }

    /// One tick: scripted events, a slice of execution on every node, then
    /// one network step.
    pub fn step(&mut self) -> Result<()> {
        while self.events.first().is_some_and(|e| e.tick <= self.tick) {
            let e = self.events.remove(0);
            self.apply(e.kind)?;
        }
        let budget = self.config.steps_per_tick;
        for t in self.nodes.values_mut() {
            if !t.all_done() {
                t.run(Some(budget))?;
            }
        }
        for t in self.nodes.values_mut() {
            for (ch, payload) in t.take_outbox() {
                self.transport.send(ch, payload)?;
            }
        }
        for (ch, payload) in self.transport.step() {
            let (_, to) = self.transport.channel(ch)?;
            if let Some(t) = self.ranks.get(&to).and_then(|n| self.nodes.get_mut(n)) {
                t.deliver(ch, payload);
            }
        }
        self.tick += 1;
        Ok(())
    }

    /// Step until every node is done and no scripted event is pending, or
    /// `max_ticks` ticks have passed. Returns whether the run completed.
    pub fn run(&mut self, max_ticks: u64) -> Result<bool> {
        for _ in 0..max_ticks {
            if self.done() && self.events.is_empty() {
                return Ok(true);
            }
            self.step()?;
        }
        Ok(self.done() && self.events.is_empty())
    }
}
