//! Checkpoint and rollback over [`Memory`].
//!
//! Two capture modes exist. `Naive` copies every in-scope cell when the
//! checkpoint is taken. `Cow` copies nothing up front; the first mutation of
//! each pre-existing cell saves its original image into the checkpoint's
//! write log. Allocations made after a checkpoint are recognised by their
//! sequence number (above the watermark) and released on restore. Freeing a
//! pre-existing allocation counts as a mutation, so its contents survive in
//! the log and the allocation is resurrected on restore.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ids::{Addr, BeadId, CheckpointId, StringId};
use crate::memory::{AllocationRecord, Cell, CellKind, Memory};
use crate::model::Resumption;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Naive,
    Cow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Tapestry,
    String(StringId),
}

/// Which cells and which writers a checkpoint covers.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScopeFilter {
    /// `None` covers every bead.
    pub beads: Option<BTreeSet<BeadId>>,
    /// When set, only that string's own mutations and allocations are
    /// rolled back.
    pub writer: Option<StringId>,
}

impl ScopeFilter {
    fn covers_bead(&self, bead: BeadId) -> bool {
        self.beads.as_ref().is_none_or(|b| b.contains(&bead))
    }

    fn covers_writer(&self, writer: Option<StringId>) -> bool {
        self.writer.is_none() || self.writer == writer
    }
}

/// Saved state of one address: the cell (absent if dead) and its allocation
/// record (absent for globals).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub cell: Option<Cell>,
    pub record: Option<AllocationRecord>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub id: CheckpointId,
    pub scope: Scope,
    pub mode: Mode,
    pub filter: ScopeFilter,
    pub alloc_watermark: u64,
    /// Eager copy (naive mode only).
    pub snapshot: BTreeMap<Addr, Image>,
    /// Original images of cells mutated since the checkpoint (cow mode).
    pub log: BTreeMap<Addr, Image>,
    pub resumption: Vec<(StringId, Resumption)>,
}

impl Checkpoint {
    pub fn write_log_len(&self) -> usize {
        self.log.len()
    }

    pub fn snapshot_len(&self) -> usize {
        self.snapshot.len()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Checkpoints {
    live: BTreeMap<CheckpointId, Checkpoint>,
    next: u32,
}

impl Checkpoints {
    pub fn get(&self, id: CheckpointId) -> Option<&Checkpoint> {
        self.live.get(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = CheckpointId> + '_ {
        self.live.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }
}

impl Memory {
    pub fn checkpoints(&self) -> &Checkpoints {
        &self.checkpoints
    }

    fn image(&self, addr: Addr) -> Image {
        Image {
            cell: self.cells.get(&addr).cloned(),
            record: self.allocs.get(&addr).cloned(),
        }
    }

    fn owner_of(&self, addr: Addr) -> Option<BeadId> {
        self.cells
            .get(&addr)
            .map(|c| c.owner)
            .or_else(|| self.allocs.get(&addr).map(|r| r.bead))
    }

    /// Record-write hook: save the pre-mutation image of `addr` into every
    /// live cow checkpoint that covers it and has no entry yet.
    pub(crate) fn note_change(
        &mut self,
        addr: Addr,
        writer: Option<StringId>,
        except: Option<CheckpointId>,
    ) {
        self.note_change_owned(addr, writer, except, None)
    }

    /// As `note_change`; `owner` stands in when the address is currently
    /// dead (a restore resurrecting it).
    fn note_change_owned(
        &mut self,
        addr: Addr,
        writer: Option<StringId>,
        except: Option<CheckpointId>,
        owner: Option<BeadId>,
    ) {
        if self.checkpoints.live.is_empty() {
            return;
        }
        let Some(owner) = self.owner_of(addr).or(owner) else {
            return;
        };
        let seq = self.allocs.get(&addr).map(|r| r.sequence);
        let mut image = None;
        for cp in self.checkpoints.live.values_mut() {
            if cp.mode != Mode::Cow || Some(cp.id) == except {
                continue;
            }
            if !cp.filter.covers_bead(owner) || !cp.filter.covers_writer(writer) {
                continue;
            }
            // Allocations newer than the checkpoint are released by
            // watermark instead of being logged.
            if seq.is_some_and(|s| s > cp.alloc_watermark) {
                continue;
            }
            if cp.log.contains_key(&addr) {
                continue;
            }
            let img = image.get_or_insert_with(|| Image {
                cell: self.cells.get(&addr).cloned(),
                record: self.allocs.get(&addr).cloned(),
            });
            cp.log.insert(addr, img.clone());
        }
    }

    fn in_scope_addrs(&self, filter: &ScopeFilter) -> BTreeSet<Addr> {
        let mut out: BTreeSet<Addr> = self
            .cells
            .iter()
            .filter(|(_, c)| filter.covers_bead(c.owner))
            .map(|(a, _)| *a)
            .collect();
        out.extend(
            self.allocs
                .iter()
                .filter(|(_, r)| filter.covers_bead(r.bead))
                .map(|(a, _)| *a),
        );
        out
    }

    pub fn take_checkpoint(
        &mut self,
        scope: Scope,
        filter: ScopeFilter,
        mode: Mode,
        resumption: Vec<(StringId, Resumption)>,
    ) -> CheckpointId {
        let id = CheckpointId(self.checkpoints.next);
        self.checkpoints.next += 1;
        let snapshot = match mode {
            Mode::Naive => self
                .in_scope_addrs(&filter)
                .into_iter()
                .map(|a| (a, self.image(a)))
                .collect(),
            Mode::Cow => BTreeMap::new(),
        };
        self.checkpoints.live.insert(
            id,
            Checkpoint {
                id,
                scope,
                mode,
                filter,
                alloc_watermark: self.sequence(),
                snapshot,
                log: BTreeMap::new(),
                resumption,
            },
        );
        id
    }

    pub fn drop_checkpoint(&mut self, id: CheckpointId) -> Result<Checkpoint> {
        self.checkpoints
            .live
            .remove(&id)
            .ok_or(Error::UnknownCheckpoint(id))
    }

    fn set_image(&mut self, addr: Addr, image: Image, except: CheckpointId) {
        if self.image(addr) == image {
            return;
        }
        let owner = image
            .cell
            .as_ref()
            .map(|c| c.owner)
            .or(image.record.as_ref().map(|r| r.bead));
        self.note_change_owned(addr, None, Some(except), owner);
        match image.cell {
            Some(c) => {
                self.cells.insert(addr, c);
            }
            None => {
                self.cells.remove(&addr);
            }
        }
        match image.record {
            Some(r) => {
                self.allocs.insert(addr, r);
            }
            None => {
                self.allocs.remove(&addr);
            }
        }
    }

    /// Roll cells and the allocation table in scope back to the checkpoint
    /// instant. Returns the saved resumption states. The checkpoint stays
    /// live and may be restored again.
    pub fn restore_checkpoint(
        &mut self,
        id: CheckpointId,
    ) -> Result<Vec<(StringId, Resumption)>> {
        let mut cp = self
            .checkpoints
            .live
            .remove(&id)
            .ok_or(Error::UnknownCheckpoint(id))?;
        // A naive snapshot lists every in-scope allocation that existed, so
        // anything else in scope is newer, even if an earlier restore
        // brought back an old sequence number.
        let newer: Vec<Addr> = self
            .allocs
            .iter()
            .filter(|(a, r)| {
                let after = match cp.mode {
                    Mode::Cow => r.sequence > cp.alloc_watermark,
                    Mode::Naive => !cp.snapshot.contains_key(a),
                };
                after && cp.filter.covers_bead(r.bead) && cp.filter.covers_writer(r.by)
            })
            .map(|(a, _)| *a)
            .collect();
        let absent = Image {
            cell: None,
            record: None,
        };
        for addr in newer {
            self.set_image(addr, absent.clone(), id);
        }
        match cp.mode {
            Mode::Cow => {
                for (addr, image) in core::mem::take(&mut cp.log) {
                    self.set_image(addr, image, id);
                }
            }
            Mode::Naive => {
                for (addr, image) in cp.snapshot.clone() {
                    self.set_image(addr, image, id);
                }
            }
        }
        let resumption = cp.resumption.clone();
        self.checkpoints.live.insert(id, cp);
        Ok(resumption)
    }

    /// True if every heap cell has a matching live record and vice versa.
    pub fn allocation_table_consistent(&self) -> bool {
        let heap_cells = self
            .cells
            .iter()
            .filter(|(_, c)| c.kind == CellKind::Heap)
            .count();
        let live = self.allocs.values().filter(|r| r.live).count();
        heap_cells == live
            && self
                .allocs
                .values()
                .filter(|r| r.live)
                .all(|r| self.cells.contains_key(&r.start))
    }
}
