//! Checkpoint files.
//!
//! ```text
//! "WVCK"                    magic
//! u32                       format version (1)
//! u64 len, [u8; len]        cells section
//! u64 len, [u8; len]        allocations section
//! u64 len, [u8; len]        resumption section
//! ```
//!
//! All integers are little-endian.
//!
//! * cells: `u64 count`, then per cell `u64 addr, u32 owner, u8 kind
//!   (0 global, 1 heap), u64 len, [u8; len] value`.
//! * allocations: `u64 region_used, u64 sequence, u64 count`, then per
//!   record `u64 start, u32 bead, u64 size, u64 sequence, u8 live,
//!   u8 has_by, u32 by`.
//! * resumption: `u64 step, u64 dispatches`, the scheduler position, then
//!   `u64 count` and per string
//!   `u32 id, u8 status (ready, running, blocked, finished, failed),
//!   u32 shared_bead_depth, u8 has_lock, u32 lock, u8 waiting (0 none,
//!   1 lock, 2 channel), u32 waiting_on, u64 steps, u32 frames`, then per
//!   frame `u32 bead, u32 module, u32 slot, u32 pc, u8 shared,
//!   u32 n, [u64; n] regs, u32 m, [u64; m] ret`. The scheduler position
//!   is `u8 policy (0 round robin, 1 seeded random), u64 seed,
//!   u64 rng_pos_lo, u64 rng_pos_hi, u64 next_ticket, u8 has_last,
//!   u32 last_class, u32 classes` with per class `u32 n, [u32; n] strings`,
//!   then `u32 pins` of `u32 class, u32 string` and `u32 tickets` of
//!   `u32 string, u64 ticket`.
//!
//! The file carries state only. It is installed into a tapestry built from
//! the same configuration with [`Tapestry::install_snapshot`].

use std::collections::BTreeMap;
use std::path::Path;

use weaves_core::memory::{AllocationRecord, Cell, CellKind};
use weaves_core::model::{Frame, Resumption, Wait};
use weaves_core::sched::SchedCursor;
use weaves_core::{
    Addr, BeadId, ChannelId, ClassId, FuncRef, LockId, ModuleId, Policy, Snapshot, Status, StringId, Tapestry,
};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 4] = b"WVCK";
pub const VERSION: u32 = 1;

const STATUSES: [Status; 5] = [Status::Ready, Status::Running, Status::Blocked, Status::Finished, Status::Failed];

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn section(&mut self, body: Writer) {
        self.u64(body.0.len() as u64);
        self.0.extend_from_slice(&body.0);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| AppError::Format(format!("{} truncated at byte {}", self.what, self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // every element takes at least one byte
        if n > (self.bytes.len() - self.at) as u64 {
            return Err(AppError::Format(format!("{} count {n} exceeds its section", self.what)));
        }
        Ok(n as usize)
    }
    fn section(&mut self, what: &'static str) -> Result<Reader<'a>> {
        let n = self.len()?;
        Ok(Reader { bytes: self.take(n)?, at: 0, what })
    }
    fn finish(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(AppError::Format(format!("{} has {} trailing bytes", self.what, self.bytes.len() - self.at)));
        }
        Ok(())
    }
    fn bad(&self, detail: &str) -> AppError {
        AppError::Format(format!("{}: {detail}", self.what))
    }
}

pub fn encode_snapshot(s: &Snapshot) -> Vec<u8> {
    let mut out = Writer::default();
    out.0.extend_from_slice(MAGIC);
    out.u32(VERSION);

    let mut cells = Writer::default();
    cells.u64(s.cells.len() as u64);
    for (addr, c) in &s.cells {
        cells.u64(addr.0);
        cells.u32(c.owner.0);
        cells.u8(match c.kind {
            CellKind::Global => 0,
            CellKind::Heap => 1,
        });
        cells.u64(c.value.len() as u64);
        cells.0.extend_from_slice(&c.value);
    }
    out.section(cells);

    let mut allocs = Writer::default();
    allocs.u64(s.region_used);
    allocs.u64(s.sequence);
    allocs.u64(s.allocations.len() as u64);
    for r in s.allocations.values() {
        allocs.u64(r.start.0);
        allocs.u32(r.bead.0);
        allocs.u64(r.size);
        allocs.u64(r.sequence);
        allocs.u8(r.live as u8);
        allocs.u8(r.by.is_some() as u8);
        allocs.u32(r.by.map_or(0, |b| b.0));
    }
    out.section(allocs);

    let mut res = Writer::default();
    res.u64(s.step);
    res.u64(s.dispatches);
    let c = &s.scheduler;
    res.u8(match c.policy {
        Policy::RoundRobinClasses => 0,
        Policy::SeededRandom => 1,
    });
    res.u64(c.seed);
    res.u64(c.rng_word_pos as u64);
    res.u64((c.rng_word_pos >> 64) as u64);
    res.u64(c.next_ticket);
    res.u8(c.last_class.is_some() as u8);
    res.u32(c.last_class.map_or(0, |k| k.0));
    res.u32(c.classes.len() as u32);
    for members in &c.classes {
        res.u32(members.len() as u32);
        members.iter().for_each(|m| res.u32(m.0));
    }
    res.u32(c.pins.len() as u32);
    for (k, s) in &c.pins {
        res.u32(k.0);
        res.u32(s.0);
    }
    res.u32(c.tickets.len() as u32);
    for (s, t) in &c.tickets {
        res.u32(s.0);
        res.u64(*t);
    }
    res.u64(s.resumption.len() as u64);
    for (id, r) in &s.resumption {
        res.u32(id.0);
        res.u8(STATUSES.iter().position(|x| *x == r.status).unwrap() as u8);
        res.u32(r.shared_bead_depth);
        res.u8(r.pending_lock.is_some() as u8);
        res.u32(r.pending_lock.map_or(0, |l| l.0));
        let (tag, on) = match r.waiting {
            None => (0, 0),
            Some(Wait::Lock(l)) => (1, l.0),
            Some(Wait::Channel(c)) => (2, c.0),
        };
        res.u8(tag);
        res.u32(on);
        res.u64(r.steps);
        res.u32(r.frames.len() as u32);
        for f in &r.frames {
            res.u32(f.bead.0);
            res.u32(f.func.module.0);
            res.u32(f.func.slot);
            res.u32(f.pc);
            res.u8(f.shared as u8);
            res.u32(f.regs.len() as u32);
            f.regs.iter().for_each(|v| res.u64(*v));
            res.u32(f.ret.len() as u32);
            f.ret.iter().for_each(|v| res.u64(*v));
        }
    }
    out.section(res);
    out.0
}

fn flag(r: &Reader, v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(r.bad(&format!("flag byte {v}"))),
    }
}

fn words(r: &mut Reader) -> Result<Vec<u64>> {
    let n = r.u32()? as usize;
    if n > (r.bytes.len() - r.at) / 8 {
        return Err(r.bad("word count exceeds its section"));
    }
    (0..n).map(|_| r.u64()).collect()
}

fn count(r: &mut Reader, min_bytes: usize) -> Result<usize> {
    let n = r.u32()? as usize;
    if n > (r.bytes.len() - r.at) / min_bytes {
        return Err(r.bad("count exceeds its section"));
    }
    Ok(n)
}

fn read_cursor(r: &mut Reader) -> Result<SchedCursor> {
    let policy = match r.u8()? {
        0 => Policy::RoundRobinClasses,
        1 => Policy::SeededRandom,
        p => return Err(r.bad(&format!("policy byte {p}"))),
    };
    let seed = r.u64()?;
    let lo = r.u64()? as u128;
    let hi = r.u64()? as u128;
    let next_ticket = r.u64()?;
    let has_last = r.u8()?;
    let has_last = flag(r, has_last)?;
    let last = r.u32()?;
    let mut classes = Vec::new();
    for _ in 0..count(r, 4)? {
        let n = count(r, 4)?;
        classes.push((0..n).map(|_| r.u32().map(StringId)).collect::<Result<Vec<_>>>()?);
    }
    let mut pins = Vec::new();
    for _ in 0..count(r, 8)? {
        pins.push((ClassId(r.u32()?), StringId(r.u32()?)));
    }
    let mut tickets = Vec::new();
    for _ in 0..count(r, 12)? {
        tickets.push((StringId(r.u32()?), r.u64()?));
    }
    Ok(SchedCursor {
        policy,
        seed,
        rng_word_pos: lo | (hi << 64),
        classes,
        pins,
        tickets,
        next_ticket,
        last_class: has_last.then_some(ClassId(last)),
    })
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Snapshot> {
    let mut top = Reader { bytes, at: 0, what: "header" };
    if top.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(AppError::Format("missing WVCK magic".into()));
    }
    let version = top.u32()?;
    if version != VERSION {
        return Err(AppError::Format(format!("unsupported version {version}")));
    }

    let mut r = top.section("cells section")?;
    let mut cells = BTreeMap::new();
    for _ in 0..r.len()? {
        let addr = Addr(r.u64()?);
        let owner = BeadId(r.u32()?);
        let kind = match r.u8()? {
            0 => CellKind::Global,
            1 => CellKind::Heap,
            k => return Err(r.bad(&format!("cell kind {k}"))),
        };
        let n = r.len()?;
        let value = r.take(n)?.to_vec();
        if cells.insert(addr, Cell { value, owner, kind }).is_some() {
            return Err(r.bad(&format!("duplicate cell {addr}")));
        }
    }
    r.finish()?;

    let mut r = top.section("allocations section")?;
    let region_used = r.u64()?;
    let sequence = r.u64()?;
    let mut allocations = BTreeMap::new();
    for _ in 0..r.len()? {
        let start = Addr(r.u64()?);
        let bead = BeadId(r.u32()?);
        let size = r.u64()?;
        let seq = r.u64()?;
        let live = r.u8()?;
        let live = flag(&r, live)?;
        let has_by = r.u8()?;
        let has_by = flag(&r, has_by)?;
        let by = r.u32()?;
        let rec = AllocationRecord {
            bead,
            start,
            size,
            sequence: seq,
            live,
            by: has_by.then_some(StringId(by)),
        };
        if allocations.insert(start, rec).is_some() {
            return Err(r.bad(&format!("duplicate allocation {start}")));
        }
    }
    r.finish()?;

    let mut r = top.section("resumption section")?;
    let step = r.u64()?;
    let dispatches = r.u64()?;
    let scheduler = read_cursor(&mut r)?;
    let mut resumption = Vec::new();
    for _ in 0..r.len()? {
        let id = StringId(r.u32()?);
        let status = *STATUSES.get(r.u8()? as usize).ok_or_else(|| r.bad("status byte"))?;
        let shared_bead_depth = r.u32()?;
        let has_lock = r.u8()?;
        let has_lock = flag(&r, has_lock)?;
        let lock = r.u32()?;
        let waiting = match (r.u8()?, r.u32()?) {
            (0, _) => None,
            (1, l) => Some(Wait::Lock(LockId(l))),
            (2, c) => Some(Wait::Channel(ChannelId(c))),
            (t, _) => return Err(r.bad(&format!("waiting tag {t}"))),
        };
        let steps = r.u64()?;
        let mut frames = Vec::new();
        for _ in 0..r.u32()? {
            let bead = BeadId(r.u32()?);
            let func = FuncRef {
                module: ModuleId(r.u32()?),
                slot: r.u32()?,
            };
            let pc = r.u32()?;
            let shared = r.u8()?;
            let shared = flag(&r, shared)?;
            let regs = words(&mut r)?;
            let ret = words(&mut r)?;
            frames.push(Frame { bead, func, pc, regs, ret, shared });
        }
        resumption.push((
            id,
            Resumption {
                status,
                frames,
                shared_bead_depth,
                pending_lock: has_lock.then_some(LockId(lock)),
                waiting,
                steps,
            },
        ));
    }
    r.finish()?;
    top.finish()?;

    Ok(Snapshot {
        cells,
        allocations,
        region_used,
        sequence,
        step,
        dispatches,
        scheduler,
        resumption,
    })
}

pub fn save_checkpoint(t: &Tapestry, path: &Path) -> Result<()> {
    std::fs::write(path, encode_snapshot(&t.snapshot()?))?;
    Ok(())
}

/// Install a checkpoint file into `t`, which must have been built from the
/// configuration the file was saved from.
pub fn load_checkpoint(t: &mut Tapestry, path: &Path) -> Result<()> {
    let snap = decode_snapshot(&std::fs::read(path)?)?;
    t.install_snapshot(snap)?;
    Ok(())
}
