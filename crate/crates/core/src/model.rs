//! Domain types: modules with code and data contexts, beads, weaves and
//! strings.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;

use crate::error::{Error, Result};
use crate::exec::{Exec, Step};
use crate::ids::{Addr, BeadId, LockId, ModuleId, StringId, WeaveId};

/// Name of a global variable in a module's data context.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolName(String);

impl SymbolName {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::InvalidDefinition(alloc::format!(
                "bad symbol name `{name}`"
            )));
        }
        Ok(SymbolName(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for SymbolName {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SymbolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Arity descriptor used to check rebinding compatibility.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Signature {
    pub params: u8,
    pub results: u8,
}

impl Signature {
    pub const fn new(params: u8, results: u8) -> Self {
        Signature { params, results }
    }
}

pub type Body = Arc<dyn Fn(&mut Exec<'_>) -> Result<Step> + Send + Sync>;

/// One function of a module's code context. A body is invoked once per
/// scheduler step and keeps its progress in the frame (`pc`, registers).
#[derive(Clone)]
pub struct Function {
    pub name: String,
    pub signature: Signature,
    pub body: Body,
}

impl Function {
    pub fn new<F>(name: impl Into<String>, signature: Signature, body: F) -> Self
    where
        F: Fn(&mut Exec<'_>) -> Result<Step> + Send + Sync + 'static,
    {
        Function {
            name: name.into(),
            signature,
            body: Arc::new(body),
        }
    }
}

impl fmt::Debug for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Function")
            .field("name", &self.name)
            .field("signature", &self.signature)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ModuleDef {
    pub name: String,
    pub globals: Vec<(SymbolName, Vec<u8>)>,
    pub entry_points: Vec<Function>,
    pub exports: Vec<Function>,
}

impl ModuleDef {
    pub fn new(name: impl Into<String>) -> Self {
        ModuleDef {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn global(mut self, name: &str, initial: Vec<u8>) -> Self {
        self.globals
            .push((SymbolName::new(name).expect("valid symbol"), initial));
        self
    }

    pub fn entry(mut self, f: Function) -> Self {
        self.entry_points.push(f);
        self
    }

    pub fn export(mut self, f: Function) -> Self {
        self.exports.push(f);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDefinition(m));
        if self.name.is_empty() {
            return bad("module name is empty".into());
        }
        if self.entry_points.is_empty() && self.exports.is_empty() {
            return bad(alloc::format!("module `{}` has no functions", self.name));
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for (sym, _) in &self.globals {
            if !seen.insert(sym.as_str()) {
                return bad(alloc::format!("duplicate global `{sym}`"));
            }
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for f in &self.entry_points {
            if !seen.insert(f.name.as_str()) {
                return bad(alloc::format!("duplicate entry point `{}`", f.name));
            }
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for f in &self.exports {
            if !seen.insert(f.name.as_str()) {
                return bad(alloc::format!("duplicate export `{}`", f.name));
            }
        }
        Ok(())
    }
}

/// Reference to a function in a registered module: entry points first, then
/// exports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FuncRef {
    pub module: ModuleId,
    pub slot: u32,
}

/// A registered module: the shared code context plus the template data
/// context new beads copy from.
#[derive(Debug)]
pub struct Module {
    pub id: ModuleId,
    pub def: ModuleDef,
}

impl Module {
    pub fn function(&self, slot: u32) -> Option<&Function> {
        let slot = slot as usize;
        let n = self.def.entry_points.len();
        if slot < n {
            self.def.entry_points.get(slot)
        } else {
            self.def.exports.get(slot - n)
        }
    }

    pub fn entry_slot(&self, name: &str) -> Option<u32> {
        self.def
            .entry_points
            .iter()
            .position(|f| f.name == name)
            .map(|i| i as u32)
    }

    pub fn export_slot(&self, name: &str) -> Option<u32> {
        self.def
            .exports
            .iter()
            .position(|f| f.name == name)
            .map(|i| (i + self.def.entry_points.len()) as u32)
    }

    pub fn declares(&self, sym: &str) -> bool {
        self.def.globals.iter().any(|(s, _)| s.as_str() == sym)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bead {
    pub id: BeadId,
    pub module: ModuleId,
    pub label: Option<String>,
    /// Symbol to cell handle. Covers exactly the module's declared globals.
    pub data_context: BTreeMap<SymbolName, Addr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Weave {
    pub id: WeaveId,
    pub label: Option<String>,
    pub beads: Vec<BeadId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Ready,
    /// Dispatched, or descheduled while still inside a shared bead.
    Running,
    Blocked,
    Finished,
    Failed,
}

impl Status {
    pub fn is_live(self) -> bool {
        !matches!(self, Status::Finished | Status::Failed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ready => "ready",
            Status::Running => "running",
            Status::Blocked => "blocked",
            Status::Finished => "finished",
            Status::Failed => "failed",
        }
    }
}

/// One activation record of a string's stack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub bead: BeadId,
    pub func: FuncRef,
    pub pc: u32,
    pub regs: Vec<u64>,
    /// Values returned by the most recent callee.
    pub ret: Vec<u64>,
    /// Whether entering this frame counted towards `shared_bead_depth`.
    pub shared: bool,
}

/// What a string is waiting for, if anything.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wait {
    Lock(LockId),
    Channel(crate::ids::ChannelId),
}

/// Resumable continuation state of a string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Resumption {
    pub status: Status,
    pub frames: Vec<Frame>,
    pub shared_bead_depth: u32,
    /// A lock the string must acquire before running its next step.
    pub pending_lock: Option<LockId>,
    pub waiting: Option<Wait>,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct StringTask {
    pub id: StringId,
    pub weave: WeaveId,
    pub entry: String,
    pub state: Resumption,
    /// Copy of the weave's global values taken at spawn time.
    pub spawn_frame: Vec<(Addr, Vec<u8>)>,
}

impl StringTask {
    pub fn status(&self) -> Status {
        self.state.status
    }

    pub fn shared_bead_depth(&self) -> u32 {
        self.state.shared_bead_depth
    }
}
