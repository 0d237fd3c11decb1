//! The composed application: registered modules, beads, weaves, strings and
//! the per-weave namespaces that tie them together.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::checkpoint::{Checkpoint, Mode, Scope, ScopeFilter};
use crate::error::{Error, Result};
use crate::exec::Mailbox;
use crate::ids::{Addr, BeadId, CheckpointId, ModuleId, NodeId, StringId, WeaveId};
use crate::locks::Locks;
use crate::memory::{Memory, NodeRegion};
use crate::model::{Bead, Frame, FuncRef, Module, ModuleDef, Resumption, Status, StringTask, Weave};
use crate::namespace::{ActiveContext, Binding, ContextTable, FunctionTable, TupleSpaceDecl};
use crate::sched::{Policy, SchedState};
use crate::trace::{Event, Trace};

#[derive(Clone)]
pub struct Tapestry {
    pub(crate) modules: Vec<Arc<Module>>,
    pub(crate) module_names: BTreeMap<String, ModuleId>,
    pub(crate) beads: BTreeMap<BeadId, Bead>,
    pub(crate) weaves: BTreeMap<WeaveId, Weave>,
    pub(crate) tables: BTreeMap<WeaveId, Arc<ContextTable>>,
    pub(crate) strings: BTreeMap<StringId, StringTask>,
    pub(crate) tuples: Vec<TupleSpaceDecl>,
    pub(crate) mem: Memory,
    pub(crate) sched: SchedState,
    pub(crate) locks: Locks,
    pub(crate) mailbox: Mailbox,
    pub(crate) trace: Trace,
    pub(crate) active: ActiveContext,
    pub(crate) diagnostics: Vec<String>,
    /// Lock and mailbox state saved alongside whole-tapestry checkpoints.
    pub(crate) ckpt_extra: BTreeMap<CheckpointId, (Locks, Mailbox)>,
    pub(crate) started: bool,
    pub(crate) next_bead: u32,
    pub(crate) next_weave: u32,
    pub(crate) next_string: u32,
}

impl Default for Tapestry {
    fn default() -> Self {
        Tapestry::new(NodeRegion::for_node(NodeId(0), 40))
    }
}

impl Tapestry {
    pub fn new(region: NodeRegion) -> Self {
        Tapestry {
            modules: Vec::new(),
            module_names: BTreeMap::new(),
            beads: BTreeMap::new(),
            weaves: BTreeMap::new(),
            tables: BTreeMap::new(),
            strings: BTreeMap::new(),
            tuples: Vec::new(),
            mem: Memory::new(region),
            sched: SchedState::new(Policy::RoundRobinClasses, 64, 0),
            locks: Locks::default(),
            mailbox: Mailbox::default(),
            trace: Trace::default(),
            active: ActiveContext::default(),
            diagnostics: Vec::new(),
            ckpt_extra: BTreeMap::new(),
            started: false,
            next_bead: 0,
            next_weave: 0,
            next_string: 0,
        }
    }

    // ---- registration -------------------------------------------------

    pub fn register_module(&mut self, def: ModuleDef) -> Result<ModuleId> {
        def.validate()?;
        if self.module_names.contains_key(&def.name) {
            return Err(Error::DuplicateModule(def.name));
        }
        let id = ModuleId(self.modules.len() as u32);
        self.module_names.insert(def.name.clone(), id);
        self.modules.push(Arc::new(Module { id, def }));
        Ok(id)
    }

    /// Registration while strings may be running. Takes effect between
    /// dispatches, which is the only time the caller can hold `&mut self`.
    pub fn insert_module_runtime(&mut self, def: ModuleDef) -> Result<ModuleId> {
        self.register_module(def)
    }

    pub fn module_id(&self, name: &str) -> Result<ModuleId> {
        self.module_names
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownModule(name.into()))
    }

    pub fn module(&self, id: ModuleId) -> Result<&Arc<Module>> {
        self.modules
            .get(id.index())
            .ok_or_else(|| Error::UnknownModule(format!("{id}")))
    }

    pub fn modules(&self) -> impl Iterator<Item = &Arc<Module>> {
        self.modules.iter()
    }

    pub fn export_ref(&self, module: &str, func: &str) -> Result<FuncRef> {
        let id = self.module_id(module)?;
        let slot = self.modules[id.index()]
            .export_slot(func)
            .ok_or_else(|| Error::UnknownFunction(format!("{module}::{func}")))?;
        Ok(FuncRef { module: id, slot })
    }

    // ---- construction -------------------------------------------------

    pub fn instantiate_bead(&mut self, module: ModuleId) -> Result<BeadId> {
        self.instantiate_labeled(module, None)
    }

    pub fn instantiate_labeled(&mut self, module: ModuleId, label: Option<String>) -> Result<BeadId> {
        let m = self.module(module)?.clone();
        let id = BeadId(self.next_bead);
        let mut data_context = BTreeMap::new();
        for (sym, init) in &m.def.globals {
            let addr = self.mem.create_global(id, init.clone())?;
            data_context.insert(sym.clone(), addr);
        }
        self.next_bead += 1;
        self.beads.insert(
            id,
            Bead {
                id,
                module,
                label,
                data_context,
            },
        );
        Ok(id)
    }

    pub fn define_weave(&mut self, beads: &[BeadId]) -> Result<WeaveId> {
        self.define_labeled_weave(beads, None)
    }

    pub fn define_labeled_weave(&mut self, beads: &[BeadId], label: Option<String>) -> Result<WeaveId> {
        if beads.is_empty() {
            return Err(Error::EmptyWeave);
        }
        let mut seen = BTreeSet::new();
        for b in beads {
            if !self.beads.contains_key(b) {
                return Err(Error::UnknownBead(*b));
            }
            if !seen.insert(*b) {
                return Err(Error::InvalidArgument(format!("bead {b} listed twice")));
            }
        }
        let id = WeaveId(self.next_weave);
        self.next_weave += 1;
        self.weaves.insert(
            id,
            Weave {
                id,
                label,
                beads: beads.to_vec(),
            },
        );
        let table = self.build_context_table(id)?;
        self.tables.insert(id, Arc::new(table));
        self.reclassify();
        Ok(id)
    }

    /// Build a fresh namespace for `weave`: later beads shadow earlier ones
    /// on name collisions.
    pub fn build_context_table(&mut self, weave: WeaveId) -> Result<ContextTable> {
        let w = self.weaves.get(&weave).ok_or(Error::UnknownWeave(weave))?;
        let mut entries = BTreeMap::new();
        let mut functions = FunctionTable::default();
        let mut notes = Vec::new();
        for bead_id in &w.beads {
            let bead = &self.beads[bead_id];
            for (sym, addr) in &bead.data_context {
                if entries.insert(sym.clone(), *addr).is_some() {
                    notes.push(format!("{weave}: symbol `{sym}` shadowed by bead {bead_id}"));
                }
            }
            let module = &self.modules[bead.module.index()];
            for f in &module.def.exports {
                let slot = module.export_slot(&f.name).unwrap();
                let binding = Binding {
                    bead: *bead_id,
                    func: FuncRef {
                        module: module.id,
                        slot,
                    },
                };
                if functions.bindings.insert(f.name.clone(), binding).is_some() {
                    notes.push(format!("{weave}: function `{}` shadowed by bead {bead_id}", f.name));
                }
            }
        }
        self.diagnostics.extend(notes);
        Ok(ContextTable {
            weave,
            entries,
            functions,
        })
    }

    fn refresh_entries(&mut self) -> Result<()> {
        let ids: Vec<WeaveId> = self.weaves.keys().copied().collect();
        for w in ids {
            let fresh = self.build_context_table(w)?;
            let table = self.tables.get_mut(&w).unwrap();
            Arc::make_mut(table).entries = fresh.entries;
        }
        Ok(())
    }

    /// Merge the listed symbols of the listed beads into one cell each. The
    /// first-listed bead's cell (and value) survives.
    pub fn share_tuple(&mut self, decl: TupleSpaceDecl) -> Result<()> {
        if self.started {
            return Err(Error::LateSharing);
        }
        if decl.beads.is_empty() {
            return Err(Error::InvalidArgument("tuple declaration lists no beads".into()));
        }
        for b in &decl.beads {
            let bead = self.beads.get(b).ok_or(Error::UnknownBead(*b))?;
            for sym in &decl.symbols {
                if !bead.data_context.contains_key(sym.as_str()) {
                    return Err(Error::UnknownSymbol(sym.as_str().into()));
                }
            }
        }
        let first = decl.beads[0];
        for sym in &decl.symbols {
            let target = self.beads[&first].data_context[sym.as_str()];
            for b in &decl.beads[1..] {
                let bead = self.beads.get_mut(b).unwrap();
                let old = bead.data_context.insert(sym.clone(), target).unwrap();
                if old != target && !self.is_cell_referenced(old) {
                    self.mem.drop_global(old);
                }
            }
        }
        self.tuples.push(decl);
        self.refresh_entries()?;
        self.reclassify();
        Ok(())
    }

    fn is_cell_referenced(&self, addr: Addr) -> bool {
        self.beads
            .values()
            .any(|b| b.data_context.values().any(|a| *a == addr))
    }

    /// Replace the implementation bound to `name` in one weave. Frames
    /// already executing the old implementation finish with it.
    pub fn rebind_function(&mut self, weave: WeaveId, name: &str, func: FuncRef) -> Result<()> {
        let table = self.tables.get(&weave).ok_or(Error::UnknownWeave(weave))?;
        let current = table
            .functions
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownFunction(name.into()))?;
        let old_sig = self.function_of(current.func)?.signature;
        let new_sig = self.function_of(func)?.signature;
        if old_sig != new_sig {
            return Err(Error::SignatureMismatch { name: name.into() });
        }
        let table = self.tables.get_mut(&weave).unwrap();
        Arc::make_mut(table)
            .functions
            .bindings
            .insert(name.into(), Binding { bead: current.bead, func });
        Ok(())
    }

    pub(crate) fn function_of(&self, f: FuncRef) -> Result<&crate::model::Function> {
        self.module(f.module)?
            .function(f.slot)
            .ok_or_else(|| Error::UnknownFunction(format!("{}#{}", f.module, f.slot)))
    }

    pub fn spawn_string(&mut self, weave: WeaveId, entry: &str) -> Result<StringId> {
        let w = self.weaves.get(&weave).ok_or(Error::UnknownWeave(weave))?;
        let (bead, func) = w
            .beads
            .iter()
            .rev()
            .find_map(|b| {
                let bead = &self.beads[b];
                let m = &self.modules[bead.module.index()];
                m.entry_slot(entry).map(|slot| {
                    (
                        *b,
                        FuncRef {
                            module: bead.module,
                            slot,
                        },
                    )
                })
            })
            .ok_or_else(|| Error::UnknownEntry(entry.into()))?;
        let table = &self.tables[&weave];
        let mut spawn_frame = Vec::with_capacity(table.len());
        for addr in table.entries.values() {
            spawn_frame.push((*addr, self.mem.value(*addr)?.to_vec()));
        }
        let id = StringId(self.next_string);
        self.next_string += 1;
        self.strings.insert(
            id,
            StringTask {
                id,
                weave,
                entry: entry.into(),
                state: Resumption {
                    status: Status::Ready,
                    frames: alloc::vec![Frame {
                        bead,
                        func,
                        pc: 0,
                        regs: Vec::new(),
                        ret: Vec::new(),
                        shared: false,
                    }],
                    shared_bead_depth: 0,
                    pending_lock: None,
                    waiting: None,
                    steps: 0,
                },
                spawn_frame,
            },
        );
        self.reclassify();
        let class = self.sched.class_of(id);
        self.trace.push(self.sched.step, Event::Spawn, id, class, "spawn");
        Ok(id)
    }

    // ---- queries ------------------------------------------------------

    pub fn bead(&self, id: BeadId) -> Result<&Bead> {
        self.beads.get(&id).ok_or(Error::UnknownBead(id))
    }

    pub fn beads(&self) -> impl Iterator<Item = &Bead> {
        self.beads.values()
    }

    pub fn weave(&self, id: WeaveId) -> Result<&Weave> {
        self.weaves.get(&id).ok_or(Error::UnknownWeave(id))
    }

    pub fn weaves(&self) -> impl Iterator<Item = &Weave> {
        self.weaves.values()
    }

    pub fn string(&self, id: StringId) -> Result<&StringTask> {
        self.strings.get(&id).ok_or(Error::UnknownString(id))
    }

    pub fn strings(&self) -> impl Iterator<Item = &StringTask> {
        self.strings.values()
    }

    pub fn tuples(&self) -> &[TupleSpaceDecl] {
        &self.tuples
    }

    pub fn context_table(&self, weave: WeaveId) -> Result<&Arc<ContextTable>> {
        self.tables.get(&weave).ok_or(Error::UnknownWeave(weave))
    }

    pub fn active(&self) -> &ActiveContext {
        &self.active
    }

    pub fn activate(&mut self, weave: WeaveId) -> Result<Option<Arc<ContextTable>>> {
        let t = self.tables.get(&weave).ok_or(Error::UnknownWeave(weave))?.clone();
        Ok(self.active.activate(t))
    }

    pub fn memory(&self) -> &Memory {
        &self.mem
    }

    pub fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn has_started(&self) -> bool {
        self.started
    }

    pub fn node(&self) -> NodeId {
        self.mem.region().node
    }

    // ---- control-path data access ------------------------------------

    pub fn resolve(&self, weave: WeaveId, sym: &str) -> Result<Addr> {
        self.context_table(weave)?
            .resolve(sym)
            .ok_or_else(|| Error::UnknownSymbol(sym.into()))
    }

    pub fn read_symbol(&self, weave: WeaveId, sym: &str) -> Result<&[u8]> {
        self.mem.value(self.resolve(weave, sym)?)
    }

    pub fn write_symbol(&mut self, weave: WeaveId, sym: &str, bytes: Vec<u8>) -> Result<()> {
        let addr = self.resolve(weave, sym)?;
        self.mem.write(addr, bytes, None)
    }

    pub fn bead_value(&self, bead: BeadId, sym: &str) -> Result<&[u8]> {
        let addr = *self
            .bead(bead)?
            .data_context
            .get(sym)
            .ok_or_else(|| Error::UnknownSymbol(sym.into()))?;
        self.mem.value(addr)
    }

    pub fn write_bead_value(&mut self, bead: BeadId, sym: &str, bytes: Vec<u8>) -> Result<()> {
        let addr = *self
            .bead(bead)?
            .data_context
            .get(sym)
            .ok_or_else(|| Error::UnknownSymbol(sym.into()))?;
        self.mem.write(addr, bytes, None)
    }

    /// Control-path allocation on behalf of a bead.
    pub fn alloc_for(&mut self, bead: BeadId, size: u64) -> Result<Addr> {
        self.bead(bead)?;
        self.mem.alloc(bead, size, None)
    }

    pub fn free(&mut self, addr: Addr) -> Result<()> {
        self.mem.free(addr, None)
    }

    pub fn store(&mut self, addr: Addr, bytes: &[u8]) -> Result<()> {
        self.mem.store(addr, bytes, None)
    }

    // ---- checkpoints --------------------------------------------------

    pub(crate) fn scope_beads(&self, weave: WeaveId) -> BTreeSet<BeadId> {
        let mut beads: BTreeSet<BeadId> = self.weaves[&weave].beads.iter().copied().collect();
        // merged tuple cells are owned by the first-listed bead
        for addr in self.tables[&weave].entries.values() {
            if let Some(c) = self.mem.cell(*addr) {
                beads.insert(c.owner);
            }
        }
        beads
    }

    pub(crate) fn resumption_of(&self, scope: Scope) -> Result<Vec<(StringId, Resumption)>> {
        Ok(match scope {
            Scope::Tapestry => self
                .strings
                .values()
                .map(|s| (s.id, s.state.clone()))
                .collect(),
            Scope::String(id) => alloc::vec![(id, self.string(id)?.state.clone())],
        })
    }

    /// Capture state at a dispatch boundary.
    pub fn take_checkpoint(&mut self, scope: Scope, mode: Mode) -> Result<CheckpointId> {
        let resumption = self.resumption_of(scope)?;
        let filter = match scope {
            Scope::Tapestry => ScopeFilter::default(),
            Scope::String(id) => {
                let weave = self.string(id)?.weave;
                ScopeFilter {
                    beads: Some(self.scope_beads(weave)),
                    writer: (mode == Mode::Cow).then_some(id),
                }
            }
        };
        let id = self.mem.take_checkpoint(scope, filter, mode, resumption);
        if scope == Scope::Tapestry {
            self.ckpt_extra
                .insert(id, (self.locks.clone(), self.mailbox.clone()));
        }
        Ok(id)
    }

    pub fn checkpoint(&self, id: CheckpointId) -> Option<&Checkpoint> {
        self.mem.checkpoints().get(id)
    }

    pub fn drop_checkpoint(&mut self, id: CheckpointId) -> Result<()> {
        self.ckpt_extra.remove(&id);
        self.mem.drop_checkpoint(id).map(|_| ())
    }

    /// Roll back to a checkpoint: cells, allocation table and the resumption
    /// state of every string in scope.
    pub fn restore(&mut self, id: CheckpointId) -> Result<()> {
        let cp = self.mem.checkpoints().get(id).ok_or(Error::UnknownCheckpoint(id))?;
        if cp.resumption.iter().any(|(s, _)| !self.strings.contains_key(s)) {
            return Err(Error::StaleCheckpoint(id));
        }
        let resumption = self.mem.restore_checkpoint(id)?;
        for (sid, state) in resumption {
            self.strings.get_mut(&sid).unwrap().state = state;
        }
        if let Some((locks, mailbox)) = self.ckpt_extra.get(&id) {
            self.locks = locks.clone();
            self.mailbox = mailbox.clone();
        }
        self.reclassify();
        Ok(())
    }

    pub fn set_policy(&mut self, policy: Policy, seed: u64) {
        let quantum = self.sched.quantum;
        self.sched = SchedState::new(policy, quantum, seed);
        self.reclassify();
    }

    pub fn set_quantum(&mut self, quantum: u32) -> Result<()> {
        if quantum == 0 {
            return Err(Error::InvalidArgument("quantum must be at least 1".into()));
        }
        self.sched.quantum = quantum;
        Ok(())
    }

    pub fn quantum(&self) -> u32 {
        self.sched.quantum
    }

    pub fn policy(&self) -> Policy {
        self.sched.policy
    }
}
