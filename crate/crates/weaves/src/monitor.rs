//! Read-only queries and live reconfiguration of a running tapestry.
//!
//! A [`Session`] owns the tapestry and applies queued commands only between
//! whole dispatches, so a quantum is never cut short and a query-free run
//! and a run with interleaved queries produce the same trace.
//!
//! Commands:
//!
//! | command | effect |
//! |---------|--------|
//! | `add_bead NAME MODULE` | instantiate a labeled bead |
//! | `add_weave NAME BEAD[,BEAD...]` | define a labeled weave |
//! | `spawn_string WEAVE [ENTRY]` | start a string (entry defaults to `main`) |
//! | `rebind WEAVE FUNC MODULE.EXPORT` | rebind one function of one weave |
//! | `insert_module NAME [global:SYM=LIT] [entry:FN=BUILTIN] [export:FN=BUILTIN]...` | register a module |
//! | `share_tuple BEAD[,BEAD...] SYM[,SYM...]` | merge globals (before the first dispatch only) |
//!
//! Every command is checked in full before it touches the tapestry; a
//! rejected command leaves it unchanged.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use weaves_core::checkpoint::{Mode, Scope};
use weaves_core::grid::identify_islands;
use weaves_core::{
    BeadId, Error as CoreError, FuncRef, ModuleDef, ModuleId, RunOutcome, SymbolName, Tapestry,
    TupleSpaceDecl, WeaveId,
};

use crate::builtins::builtin_function;
use crate::config::{load_tapestry, parse_literal, EventDecl, TapestryConfig};
use crate::error::{AppError, Result};

pub const QUERIES: [&str; 7] = ["summary", "beads", "weaves", "strings", "classes", "checkpoints", "islands"];

/// A fully resolved reconfiguration command.
#[derive(Debug)]
enum Command {
    AddBead { name: String, module: ModuleId },
    AddWeave { name: String, beads: Vec<BeadId> },
    Spawn { weave: WeaveId, entry: String },
    Rebind { weave: WeaveId, func: String, to: FuncRef },
    InsertModule(ModuleDef),
    ShareTuple(TupleSpaceDecl),
}

pub struct Session {
    tapestry: Tapestry,
    pending: VecDeque<String>,
    /// Config events not yet applied, by ascending step.
    events: VecDeque<EventDecl>,
    applied: Vec<String>,
}

impl Session {
    pub fn new(tapestry: Tapestry) -> Self {
        Session {
            tapestry,
            pending: VecDeque::new(),
            events: VecDeque::new(),
            applied: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TapestryConfig) -> Result<Self> {
        let (t, _) = load_tapestry(cfg)?;
        let mut s = Session::new(t);
        let mut events = cfg.events.clone();
        events.sort_by_key(|e| e.at);
        s.events = events.into();
        Ok(s)
    }

    pub fn tapestry(&self) -> &Tapestry {
        &self.tapestry
    }

    pub fn tapestry_mut(&mut self) -> &mut Tapestry {
        &mut self.tapestry
    }

    pub fn into_tapestry(self) -> Tapestry {
        self.tapestry
    }

    /// Commands applied so far, in order.
    pub fn applied(&self) -> &[String] {
        &self.applied
    }

    /// Queue a command for the next dispatch boundary.
    pub fn submit(&mut self, command: &str) {
        self.pending.push_back(command.to_string());
    }

    /// Answer a query without touching execution state.
    pub fn query(&self, q: &str) -> Result<String> {
        query(&self.tapestry, q)
    }

    /// Apply one command now. The caller holds `&mut self`, so no dispatch
    /// is in progress.
    pub fn apply(&mut self, command: &str) -> Result<()> {
        let cmd = resolve(&self.tapestry, command)?;
        execute(&mut self.tapestry, cmd)?;
        self.applied.push(command.to_string());
        Ok(())
    }

    fn apply_due(&mut self) -> Result<()> {
        while let Some(c) = self.pending.pop_front() {
            self.apply(&c)?;
        }
        let step = self.tapestry.scheduler().step();
        while self.events.front().is_some_and(|e| e.at <= step) {
            let e = self.events.pop_front().unwrap();
            self.apply(&e.command)?;
        }
        Ok(())
    }

    /// Apply what is due, then run one dispatch.
    pub fn step(&mut self) -> Result<RunOutcome> {
        self.apply_due()?;
        Ok(self.tapestry.run_dispatches(1)?)
    }

    /// Run up to `max_dispatches` dispatches, applying commands and events
    /// between them.
    pub fn run_for(&mut self, max_dispatches: u64) -> Result<RunOutcome> {
        for _ in 0..max_dispatches {
            match self.step()? {
                RunOutcome::Budget => {}
                other => return Ok(other),
            }
        }
        Ok(RunOutcome::Budget)
    }

    /// Run until the tapestry is done or waiting. Events scheduled past the
    /// last step are applied once execution stops, then the run resumes.
    pub fn run(&mut self) -> Result<RunOutcome> {
        loop {
            match self.step()? {
                RunOutcome::Budget => {}
                other => {
                    if self.pending.is_empty() && self.events.is_empty() {
                        return Ok(other);
                    }
                    while let Some(e) = self.events.pop_front() {
                        self.pending.push_back(e.command);
                    }
                }
            }
        }
    }
}

fn invalid(msg: String) -> AppError {
    CoreError::InvalidArgument(msg).into()
}

fn find_bead(t: &Tapestry, name: &str) -> Result<BeadId> {
    t.beads()
        .find(|b| b.label.as_deref() == Some(name) || b.id.to_string() == name)
        .map(|b| b.id)
        .ok_or_else(|| AppError::UnresolvedReference(name.into()))
}

fn find_weave(t: &Tapestry, name: &str) -> Result<WeaveId> {
    t.weaves()
        .find(|w| w.label.as_deref() == Some(name) || w.id.to_string() == name)
        .map(|w| w.id)
        .ok_or_else(|| AppError::UnresolvedReference(name.into()))
}

fn label_taken(t: &Tapestry, name: &str) -> bool {
    t.beads().any(|b| b.label.as_deref() == Some(name)) || t.weaves().any(|w| w.label.as_deref() == Some(name))
}

fn list(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).collect()
}

/// Parse and check a command against the current tapestry.
fn resolve(t: &Tapestry, text: &str) -> Result<Command> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let usage = |u: &str| invalid(format!("usage: {u}"));
    match words.as_slice() {
        ["add_bead", name, module] => {
            if label_taken(t, name) {
                return Err(invalid(format!("name `{name}` already in use")));
            }
            let module = t.module_id(module).map_err(|_| AppError::UnresolvedReference(module.to_string()))?;
            Ok(Command::AddBead { name: name.to_string(), module })
        }
        ["add_bead", ..] => Err(usage("add_bead NAME MODULE")),
        ["add_weave", name, beads] => {
            if label_taken(t, name) {
                return Err(invalid(format!("name `{name}` already in use")));
            }
            let beads = list(beads).into_iter().map(|b| find_bead(t, b)).collect::<Result<Vec<_>>>()?;
            if beads.is_empty() {
                return Err(usage("add_weave NAME BEAD[,BEAD...]"));
            }
            Ok(Command::AddWeave { name: name.to_string(), beads })
        }
        ["add_weave", ..] => Err(usage("add_weave NAME BEAD[,BEAD...]")),
        ["spawn_string", weave] | ["spawn_string", weave, _] => {
            let entry = words.get(2).copied().unwrap_or("main");
            let weave = find_weave(t, weave)?;
            let w = t.weave(weave)?;
            let has_entry = w.beads.iter().any(|b| {
                t.bead(*b)
                    .and_then(|b| t.module(b.module))
                    .is_ok_and(|m| m.entry_slot(entry).is_some())
            });
            if !has_entry {
                return Err(AppError::UnresolvedReference(entry.into()));
            }
            Ok(Command::Spawn { weave, entry: entry.to_string() })
        }
        ["spawn_string", ..] => Err(usage("spawn_string WEAVE [ENTRY]")),
        ["rebind", weave, func, target] => {
            let weave = find_weave(t, weave)?;
            let (m, f) = target
                .split_once('.')
                .ok_or_else(|| usage("rebind WEAVE FUNC MODULE.EXPORT"))?;
            let to = t.export_ref(m, f).map_err(|_| AppError::UnresolvedReference(target.to_string()))?;
            // the signature check happens in the tapestry, before any change
            Ok(Command::Rebind { weave, func: func.to_string(), to })
        }
        ["rebind", ..] => Err(usage("rebind WEAVE FUNC MODULE.EXPORT")),
        ["insert_module", name, parts @ ..] => {
            if t.module_id(name).is_ok() {
                return Err(invalid(format!("module `{name}` already registered")));
            }
            let mut def = ModuleDef::new(*name);
            for p in parts {
                let (kind, rest) = p.split_once(':').ok_or_else(|| invalid(format!("bad module part `{p}`")))?;
                let (sym, val) = rest.split_once('=').ok_or_else(|| invalid(format!("bad module part `{p}`")))?;
                match kind {
                    "global" => {
                        let lit = parse_literal(val, 1, 1)?;
                        SymbolName::new(sym)?;
                        def = def.global(sym, lit.to_bytes());
                    }
                    "entry" | "export" => {
                        let f = builtin_function(sym, val).ok_or_else(|| AppError::UnresolvedReference(val.into()))?;
                        def = if kind == "entry" { def.entry(f) } else { def.export(f) };
                    }
                    _ => return Err(invalid(format!("bad module part `{p}`"))),
                }
            }
            Ok(Command::InsertModule(def))
        }
        ["share_tuple", beads, syms] => {
            let beads = list(beads).into_iter().map(|b| find_bead(t, b)).collect::<Result<Vec<_>>>()?;
            let symbols = list(syms).into_iter().map(SymbolName::new).collect::<weaves_core::Result<Vec<_>>>()?;
            if t.has_started() {
                return Err(CoreError::LateSharing.into());
            }
            Ok(Command::ShareTuple(TupleSpaceDecl { symbols, beads }))
        }
        ["share_tuple", ..] => Err(usage("share_tuple BEAD[,BEAD...] SYM[,SYM...]")),
        [] => Err(invalid("empty command".into())),
        [other, ..] => Err(invalid(format!("unknown command `{other}`"))),
    }
}

/// Perform a resolved command. Each arm is one tapestry operation, which
/// validates before mutating.
fn execute(t: &mut Tapestry, cmd: Command) -> Result<()> {
    match cmd {
        Command::AddBead { name, module } => {
            t.instantiate_labeled(module, Some(name))?;
        }
        Command::AddWeave { name, beads } => {
            t.define_labeled_weave(&beads, Some(name))?;
        }
        Command::Spawn { weave, entry } => {
            t.spawn_string(weave, &entry)?;
        }
        Command::Rebind { weave, func, to } => t.rebind_function(weave, &func, to)?,
        Command::InsertModule(def) => {
            t.insert_module_runtime(def)?;
        }
        Command::ShareTuple(decl) => t.share_tuple(decl)?,
    }
    Ok(())
}

fn joined<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    let v: Vec<String> = items.into_iter().map(|i| i.to_string()).collect();
    if v.is_empty() {
        "-".into()
    } else {
        v.join(",")
    }
}

/// Answer one query. Output is one record per line.
pub fn query(t: &Tapestry, q: &str) -> Result<String> {
    let mut out = String::new();
    match q.trim() {
        "summary" => {
            let finished = t.strings().filter(|s| !s.status().is_live()).count();
            let _ = writeln!(out, "modules={}", t.modules().count());
            let _ = writeln!(out, "beads={}", t.beads().count());
            let _ = writeln!(out, "weaves={}", t.weaves().count());
            let _ = writeln!(out, "strings={}", t.strings().count());
            let _ = writeln!(out, "finished={finished}");
            let _ = writeln!(out, "classes={}", t.scheduler().classes().len());
            let _ = writeln!(out, "step={}", t.scheduler().step());
            let _ = writeln!(out, "dispatches={}", t.scheduler().dispatches());
        }
        "beads" => {
            for b in t.beads() {
                let module = t.module(b.module).map(|m| m.def.name.clone()).unwrap_or_default();
                let shared = if t.scheduler().is_shared(b.id) { " shared" } else { "" };
                let _ = writeln!(
                    out,
                    "{} label={} module={} globals={}{}",
                    b.id,
                    b.label.as_deref().unwrap_or("-"),
                    module,
                    b.data_context.len(),
                    shared
                );
            }
        }
        "weaves" => {
            for w in t.weaves() {
                let _ = writeln!(out, "{} label={} beads={}", w.id, w.label.as_deref().unwrap_or("-"), joined(&w.beads));
            }
        }
        "strings" => {
            for s in t.strings() {
                let class = t.scheduler().class_of(s.id).map_or("-".to_string(), |c| c.to_string());
                let _ = writeln!(
                    out,
                    "{} weave={} entry={} status={} class={}",
                    s.id,
                    s.weave,
                    s.entry,
                    s.status().as_str(),
                    class
                );
            }
        }
        "classes" => {
            for (i, c) in t.scheduler().classes().iter().enumerate() {
                let _ = writeln!(out, "k{i} strings={}", joined(c));
            }
        }
        "checkpoints" => {
            let reg = t.memory().checkpoints();
            for id in reg.ids() {
                let Some(c) = reg.get(id) else { continue };
                let scope = match c.scope {
                    Scope::Tapestry => "tapestry".to_string(),
                    Scope::String(s) => s.to_string(),
                };
                let mode = match c.mode {
                    Mode::Naive => "naive",
                    Mode::Cow => "cow",
                };
                let _ = writeln!(out, "{} scope={scope} mode={mode}", c.id);
            }
        }
        "islands" => {
            for (i, isl) in identify_islands(t, None)?.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "i{i} beads={} weaves={} strings={}",
                    joined(&isl.beads),
                    joined(&isl.weaves),
                    joined(&isl.strings)
                );
            }
        }
        other => return Err(AppError::UnknownQuery(other.into())),
    }
    Ok(out)
}

fn outcome_name(o: RunOutcome) -> &'static str {
    match o {
        RunOutcome::Done => "done",
        RunOutcome::Waiting => "waiting",
        RunOutcome::Budget => "budget",
    }
}

/// Line protocol over a reader and writer. Each input line is a query, a
/// command, `run [DISPATCHES]` or `quit`; each response ends with a blank
/// line. Errors are reported as `error: ...` and do not end the session.
pub fn serve(session: &mut Session, input: impl BufRead, mut output: impl Write) -> Result<()> {
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        let reply = match words.as_slice() {
            ["quit"] => break,
            [q] if QUERIES.contains(q) => session.query(q),
            ["run"] => session.run().map(|o| format!("{}\n", outcome_name(o))),
            ["run", n] => match n.parse::<u64>() {
                Ok(n) => session.run_for(n).map(|o| format!("{}\n", outcome_name(o))),
                Err(_) => Err(invalid(format!("`{n}` is not a dispatch count"))),
            },
            _ => session.apply(line).map(|()| "ok\n".to_string()),
        };
        match reply {
            Ok(text) => write!(output, "{text}")?,
            Err(e) => writeln!(output, "error: {e}")?,
        }
        writeln!(output)?;
        output.flush()?;
    }
    Ok(())
}

