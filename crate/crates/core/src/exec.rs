//! The view a function body gets of the runtime during one step.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ids::{Addr, BeadId, ChannelId, LockId, StringId};
use crate::memory::Memory;
use crate::model::Frame;
use crate::namespace::ContextTable;
use crate::value;

/// What a body asks the scheduler to do after its step.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    /// Keep going; the body has advanced its own `pc`.
    Continue,
    /// Give up the rest of the quantum.
    Yield,
    /// Push a frame for the function bound to `func` in the weave.
    Call { func: String, args: Vec<u64> },
    /// Pop this frame, handing `values` to the caller.
    Return(Vec<u64>),
    Acquire(LockId),
    Release(LockId),
    /// Block until a message is available on the channel. The body should
    /// not advance `pc`, so the receive is retried on wake-up.
    Wait(ChannelId),
}

impl Step {
    pub fn call(func: &str, args: &[u64]) -> Step {
        Step::Call {
            func: func.into(),
            args: args.to_vec(),
        }
    }

    pub fn ret() -> Step {
        Step::Return(Vec::new())
    }
}

/// Node-local message queues between the runtime and the transport.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mailbox {
    pub inbox: BTreeMap<ChannelId, VecDeque<Vec<u8>>>,
    pub outbox: Vec<(ChannelId, Vec<u8>)>,
}

impl Mailbox {
    pub fn has_message(&self, ch: ChannelId) -> bool {
        self.inbox.get(&ch).is_some_and(|q| !q.is_empty())
    }
}

pub struct Exec<'a> {
    pub(crate) string: StringId,
    pub(crate) frame: &'a mut Frame,
    pub(crate) table: &'a ContextTable,
    pub(crate) mem: &'a mut Memory,
    pub(crate) mailbox: &'a mut Mailbox,
    pub(crate) step: u64,
}

impl<'a> Exec<'a> {
    pub fn string(&self) -> StringId {
        self.string
    }

    /// The bead whose code is executing.
    pub fn bead(&self) -> BeadId {
        self.frame.bead
    }

    pub fn global_step(&self) -> u64 {
        self.step
    }

    pub fn pc(&self) -> u32 {
        self.frame.pc
    }

    pub fn set_pc(&mut self, pc: u32) {
        self.frame.pc = pc;
    }

    pub fn advance(&mut self) {
        self.frame.pc += 1;
    }

    pub fn reg(&self, i: usize) -> u64 {
        self.frame.regs.get(i).copied().unwrap_or(0)
    }

    pub fn set_reg(&mut self, i: usize, v: u64) {
        if self.frame.regs.len() <= i {
            self.frame.regs.resize(i + 1, 0);
        }
        self.frame.regs[i] = v;
    }

    pub fn reg_f64(&self, i: usize) -> f64 {
        value::word_f64(self.reg(i))
    }

    pub fn set_reg_f64(&mut self, i: usize, v: f64) {
        self.set_reg(i, value::f64_word(v));
    }

    /// Values returned by the last completed call.
    pub fn returned(&self) -> &[u64] {
        &self.frame.ret
    }

    pub fn addr_of(&self, sym: &str) -> Result<Addr> {
        self.table
            .resolve(sym)
            .ok_or_else(|| Error::UnknownSymbol(sym.into()))
    }

    pub fn read(&self, sym: &str) -> Result<&[u8]> {
        self.mem.value(self.addr_of(sym)?)
    }

    pub fn read_i64(&self, sym: &str) -> Result<i64> {
        value::to_i64(self.read(sym)?)
    }

    pub fn read_u64(&self, sym: &str) -> Result<u64> {
        value::to_u64(self.read(sym)?)
    }

    pub fn read_f64(&self, sym: &str) -> Result<f64> {
        value::to_f64(self.read(sym)?)
    }

    pub fn read_f64s(&self, sym: &str) -> Result<Vec<f64>> {
        value::to_f64s(self.read(sym)?)
    }

    pub fn write(&mut self, sym: &str, bytes: Vec<u8>) -> Result<()> {
        let addr = self.addr_of(sym)?;
        self.mem.write(addr, bytes, Some(self.string))
    }

    pub fn write_i64(&mut self, sym: &str, v: i64) -> Result<()> {
        self.write(sym, value::from_i64(v))
    }

    pub fn write_u64(&mut self, sym: &str, v: u64) -> Result<()> {
        self.write(sym, value::from_u64(v))
    }

    pub fn write_f64(&mut self, sym: &str, v: f64) -> Result<()> {
        self.write(sym, value::from_f64(v))
    }

    pub fn write_f64s(&mut self, sym: &str, vs: &[f64]) -> Result<()> {
        self.write(sym, value::from_f64s(vs))
    }

    /// Tracked dynamic allocation, attributed to the executing bead.
    pub fn alloc(&mut self, size: u64) -> Result<Addr> {
        let bead = self.frame.bead;
        self.mem.alloc(bead, size, Some(self.string))
    }

    pub fn free(&mut self, addr: Addr) -> Result<()> {
        self.mem.free(addr, Some(self.string))
    }

    pub fn load(&self, addr: Addr, len: u64) -> Result<&[u8]> {
        self.mem.load(addr, len)
    }

    pub fn load_u64(&self, addr: Addr) -> Result<u64> {
        value::to_u64(self.mem.load(addr, 8)?)
    }

    pub fn store(&mut self, addr: Addr, bytes: &[u8]) -> Result<()> {
        self.mem.store(addr, bytes, Some(self.string))
    }

    pub fn send(&mut self, ch: ChannelId, payload: Vec<u8>) {
        self.mailbox.outbox.push((ch, payload));
    }

    pub fn recv(&mut self, ch: ChannelId) -> Option<Vec<u8>> {
        self.mailbox.inbox.get_mut(&ch)?.pop_front()
    }
}
