//! Cell store and allocation tracking for one node's region.
//!
//! Every global and every dynamic allocation is a cell addressed by its
//! abstract address. All mutations pass through [`Memory`] so that live
//! checkpoints can intercept them.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::Checkpoints;
use crate::error::{Error, Result};
use crate::ids::{Addr, BeadId, NodeId, StringId};

const ALIGN: u64 = 8;
/// Large regions never hand out their low page, so small integers stored in
/// cells are not mistaken for addresses.
const RESERVED: u64 = 4096;

/// A statically assigned, disjoint slice of the abstract address space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeRegion {
    pub node: NodeId,
    pub base: u64,
    pub extent: u64,
    cursor: u64,
}

impl NodeRegion {
    pub fn new(node: NodeId, base: u64, extent: u64) -> Self {
        NodeRegion {
            node,
            base,
            extent,
            cursor: 0,
        }
    }

    /// Region `index` of a `vm_bits` split: base = index << vm_bits.
    pub fn for_node(node: NodeId, vm_bits: u32) -> Self {
        let extent = 1u64 << vm_bits;
        let mut r = NodeRegion::new(node, (node.0 as u64) << vm_bits, extent);
        if extent >= 16 * RESERVED {
            r.cursor = RESERVED;
        }
        r
    }

    pub fn contains(&self, addr: Addr) -> bool {
        addr.0 >= self.base && addr.0 - self.base < self.extent
    }

    pub fn used(&self) -> u64 {
        self.cursor
    }

    pub fn remaining(&self) -> u64 {
        self.extent - self.cursor
    }

    pub fn reserve(&mut self, size: u64) -> Result<Addr> {
        let size = size.max(1).div_ceil(ALIGN) * ALIGN;
        if size > self.remaining() {
            return Err(Error::RegionOverflow);
        }
        let addr = Addr(self.base + self.cursor);
        self.cursor += size;
        Ok(addr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CellKind {
    Global,
    Heap,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cell {
    pub value: Vec<u8>,
    pub owner: BeadId,
    pub kind: CellKind,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocationRecord {
    pub bead: BeadId,
    pub start: Addr,
    pub size: u64,
    pub sequence: u64,
    pub live: bool,
    /// The string that performed the allocation, if any.
    pub by: Option<StringId>,
}

#[derive(Clone, Debug)]
pub struct Memory {
    region: NodeRegion,
    pub(crate) cells: BTreeMap<Addr, Cell>,
    pub(crate) allocs: BTreeMap<Addr, AllocationRecord>,
    next_seq: u64,
    pub(crate) checkpoints: Checkpoints,
}

impl Memory {
    pub fn new(region: NodeRegion) -> Self {
        Memory {
            region,
            cells: BTreeMap::new(),
            allocs: BTreeMap::new(),
            next_seq: 1,
            checkpoints: Checkpoints::default(),
        }
    }

    pub fn region(&self) -> &NodeRegion {
        &self.region
    }

    /// Sequence number of the most recent allocation (0 before any).
    pub fn sequence(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn cells(&self) -> &BTreeMap<Addr, Cell> {
        &self.cells
    }

    pub fn allocations(&self) -> &BTreeMap<Addr, AllocationRecord> {
        &self.allocs
    }

    pub fn cell(&self, addr: Addr) -> Option<&Cell> {
        self.cells.get(&addr)
    }

    pub fn value(&self, addr: Addr) -> Result<&[u8]> {
        self.cells
            .get(&addr)
            .map(|c| c.value.as_slice())
            .ok_or(Error::UnknownAddress(addr))
    }

    pub(crate) fn create_global(&mut self, owner: BeadId, value: Vec<u8>) -> Result<Addr> {
        let addr = self.region.reserve(value.len() as u64)?;
        self.cells.insert(
            addr,
            Cell {
                value,
                owner,
                kind: CellKind::Global,
            },
        );
        Ok(addr)
    }

    pub(crate) fn drop_global(&mut self, addr: Addr) {
        self.cells.remove(&addr);
    }

    /// Replace a cell's whole value.
    pub fn write(&mut self, addr: Addr, value: Vec<u8>, writer: Option<StringId>) -> Result<()> {
        if !self.cells.contains_key(&addr) {
            return Err(Error::UnknownAddress(addr));
        }
        self.note_change(addr, writer, None);
        self.cells.get_mut(&addr).unwrap().value = value;
        Ok(())
    }

    fn containing(&self, addr: Addr) -> Result<(Addr, u64)> {
        let (&start, cell) = self
            .cells
            .range(..=addr)
            .next_back()
            .ok_or(Error::UnknownAddress(addr))?;
        let offset = addr.0 - start.0;
        if offset >= cell.value.len().max(1) as u64 {
            return Err(Error::UnknownAddress(addr));
        }
        Ok((start, offset))
    }

    /// Read `len` bytes at any address inside a live cell.
    pub fn load(&self, addr: Addr, len: u64) -> Result<&[u8]> {
        let (start, offset) = self.containing(addr)?;
        let cell = &self.cells[&start];
        let end = offset + len;
        if end > cell.value.len() as u64 {
            return Err(Error::OutOfBounds { addr: start, offset, len });
        }
        Ok(&cell.value[offset as usize..end as usize])
    }

    /// Write bytes at any address inside a live cell.
    pub fn store(&mut self, addr: Addr, bytes: &[u8], writer: Option<StringId>) -> Result<()> {
        let (start, offset) = self.containing(addr)?;
        let len = bytes.len() as u64;
        if offset + len > self.cells[&start].value.len() as u64 {
            return Err(Error::OutOfBounds { addr: start, offset, len });
        }
        self.note_change(start, writer, None);
        let cell = self.cells.get_mut(&start).unwrap();
        cell.value[offset as usize..(offset + len) as usize].copy_from_slice(bytes);
        Ok(())
    }

    pub fn alloc(&mut self, bead: BeadId, size: u64, by: Option<StringId>) -> Result<Addr> {
        if size == 0 {
            return Err(Error::ZeroSizedAllocation);
        }
        let start = self.region.reserve(size)?;
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.allocs.insert(
            start,
            AllocationRecord {
                bead,
                start,
                size,
                sequence,
                live: true,
                by,
            },
        );
        self.cells.insert(
            start,
            Cell {
                value: vec![0; size as usize],
                owner: bead,
                kind: CellKind::Heap,
            },
        );
        Ok(start)
    }

    pub fn free(&mut self, addr: Addr, by: Option<StringId>) -> Result<()> {
        match self.allocs.get(&addr) {
            None => return Err(Error::UnknownAddress(addr)),
            Some(r) if !r.live => return Err(Error::DoubleFree(addr)),
            Some(_) => {}
        }
        self.note_change(addr, by, None);
        self.allocs.get_mut(&addr).unwrap().live = false;
        self.cells.remove(&addr);
        Ok(())
    }

    /// Move a cell (and its allocation record) in from another node without
    /// changing its address. The record is restamped with a local sequence
    /// number so checkpoint watermarks on this node stay meaningful.
    pub(crate) fn adopt(&mut self, addr: Addr, cell: Cell, record: Option<AllocationRecord>) {
        self.cells.insert(addr, cell);
        if let Some(mut r) = record {
            r.sequence = self.next_seq;
            self.next_seq += 1;
            self.allocs.insert(addr, r);
        }
    }

    pub(crate) fn evict(&mut self, addr: Addr) -> (Option<Cell>, Option<AllocationRecord>) {
        (self.cells.remove(&addr), self.allocs.remove(&addr))
    }

    /// Bytes held by cells owned by the given beads.
    pub fn footprint<F: Fn(BeadId) -> bool>(&self, owned: F) -> u64 {
        self.cells
            .values()
            .filter(|c| owned(c.owner))
            .map(|c| c.value.len() as u64)
            .sum()
    }

    pub(crate) fn reset_counters(&mut self, region_used: u64, sequence: u64) {
        self.region.cursor = region_used;
        self.next_seq = sequence + 1;
    }

    pub(crate) fn region_mut(&mut self) -> &mut NodeRegion {
        &mut self.region
    }
}
