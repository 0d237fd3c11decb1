//! Detached copies of execution state: the cells, the allocation table and
//! every string's resumption. Code, beads and weaves are not included; a
//! snapshot is installed into a tapestry built from the same definitions.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ids::{Addr, StringId};
use crate::memory::{AllocationRecord, Cell};
use crate::model::Resumption;
use crate::sched::SchedCursor;
use crate::tapestry::Tapestry;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snapshot {
    pub cells: BTreeMap<Addr, Cell>,
    pub allocations: BTreeMap<Addr, AllocationRecord>,
    /// Bytes of the node region handed out so far.
    pub region_used: u64,
    /// Sequence number of the most recent allocation.
    pub sequence: u64,
    pub step: u64,
    pub dispatches: u64,
    pub scheduler: SchedCursor,
    pub resumption: Vec<(StringId, Resumption)>,
}

impl Tapestry {
    /// Copy the execution state. Refused while a lock is held or awaited,
    /// or while messages sit in the inbox, since neither travels.
    pub fn snapshot(&self) -> Result<Snapshot> {
        if self.locks.records().any(|r| r.holder.is_some() || !r.waiters.is_empty()) {
            return Err(Error::InvalidArgument("cannot snapshot while locks are held".into()));
        }
        if self.mailbox.inbox.values().any(|q| !q.is_empty()) {
            return Err(Error::InvalidArgument("cannot snapshot with undelivered messages".into()));
        }
        Ok(Snapshot {
            cells: self.mem.cells.clone(),
            allocations: self.mem.allocs.clone(),
            region_used: self.mem.region().used(),
            sequence: self.mem.sequence(),
            step: self.sched.step,
            dispatches: self.sched.dispatches,
            scheduler: self.sched.cursor(),
            resumption: self.strings.values().map(|s| (s.id, s.state.clone())).collect(),
        })
    }

    /// Replace the execution state with `snap`. The tapestry must hold the
    /// same strings and beads as the one the snapshot came from, and no
    /// live checkpoints.
    pub fn install_snapshot(&mut self, snap: Snapshot) -> Result<()> {
        if !self.mem.checkpoints().is_empty() {
            return Err(Error::InvalidArgument("live checkpoints would be invalidated".into()));
        }
        let ours: Vec<StringId> = self.strings.keys().copied().collect();
        let theirs: Vec<StringId> = snap.resumption.iter().map(|(s, _)| *s).collect();
        if ours != theirs {
            return Err(Error::InvalidArgument("snapshot strings do not match the tapestry".into()));
        }
        if let Some(c) = snap.cells.values().find(|c| !self.beads.contains_key(&c.owner)) {
            return Err(Error::UnknownBead(c.owner));
        }
        if let Some(a) = snap.cells.keys().find(|a| !self.mem.region().contains(**a)) {
            return Err(Error::InvalidArgument(format!("cell {a} lies outside this node's region")));
        }
        for (_, r) in &snap.resumption {
            for f in &r.frames {
                if !self.beads.contains_key(&f.bead) {
                    return Err(Error::UnknownBead(f.bead));
                }
                self.function_of(f.func)?;
            }
        }
        self.check_cursor(&snap.scheduler)?;
        if snap.region_used > self.mem.region().extent {
            return Err(Error::RegionOverflow);
        }
        self.mem.cells = snap.cells;
        self.mem.allocs = snap.allocations;
        self.mem.reset_counters(snap.region_used, snap.sequence);
        for (sid, state) in snap.resumption {
            self.strings.get_mut(&sid).unwrap().state = state;
        }
        self.sched.step = snap.step;
        self.sched.dispatches = snap.dispatches;
        self.locks = Default::default();
        self.started = snap.step > 0;
        self.install_cursor(snap.scheduler)
    }
}
