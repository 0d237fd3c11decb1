//! Per-weave context tables.
//!
//! A context table plays the role of a global offset table: every symbol of
//! the weave maps to the address of the cell holding it. Function bindings
//! live in the same table, so activating a namespace is one reference swap.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::ids::{Addr, BeadId, WeaveId};
use crate::model::{FuncRef, SymbolName};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Binding {
    pub bead: BeadId,
    pub func: FuncRef,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FunctionTable {
    pub bindings: BTreeMap<String, Binding>,
}

impl FunctionTable {
    pub fn get(&self, name: &str) -> Option<&Binding> {
        self.bindings.get(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextTable {
    pub weave: WeaveId,
    pub entries: BTreeMap<SymbolName, Addr>,
    pub functions: FunctionTable,
}

impl ContextTable {
    pub fn resolve(&self, sym: &str) -> Option<Addr> {
        self.entries.get(sym).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Per-symbol sharing of globals across a set of beads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TupleSpaceDecl {
    pub symbols: Vec<SymbolName>,
    pub beads: Vec<BeadId>,
}

/// The namespace currently in force on an executor.
#[derive(Clone, Debug, Default)]
pub struct ActiveContext {
    current: Option<Arc<ContextTable>>,
}

impl ActiveContext {
    /// Install `table`, handing back whatever was active before.
    #[inline]
    pub fn activate(&mut self, table: Arc<ContextTable>) -> Option<Arc<ContextTable>> {
        self.current.replace(table)
    }

    pub fn current(&self) -> Option<&Arc<ContextTable>> {
        self.current.as_ref()
    }

    pub fn resolve(&self, sym: &str) -> Option<Addr> {
        self.current.as_ref()?.resolve(sym)
    }
}
