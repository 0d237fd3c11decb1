//! Tapestry configuration files.
//!
//! ```text
//! weaves-config v1
//! # two solvers sharing a mediator
//! [module]
//! name = solver
//! global calls = u64:50
//! global done = u64:0
//! entry main = caller
//!
//! [module]
//! name = mediator
//! global inside = u64:0
//! global entries = u64:0
//! export work = guarded_work
//!
//! [bead]
//! name = s1
//! module = solver
//!
//! [weave]
//! name = w1
//! beads = s1, m12
//!
//! [string]
//! weave = w1
//! entry = main
//! ```
//!
//! The first line is the version header. Every other non-blank line is a
//! section header `[kind]` or a `key = value` line belonging to the section
//! above it; `#` starts a comment outside string literals. Sections:
//!
//! | section    | keys |
//! |------------|------|
//! | `[module]` | `name`; any number of `global NAME = LITERAL`, `entry NAME = BUILTIN`, `export NAME = BUILTIN` |
//! | `[bead]`   | `name`, `module`, optional `node` (default 0) |
//! | `[weave]`  | `name`, `beads` (comma list, in resolution order) |
//! | `[string]` | `weave`, optional `entry` (default `main`) |
//! | `[tuple]`  | `beads`, `symbols` (comma lists) |
//! | `[grid]`   | optional `nodes`, `total_bits`, `vm_bits`, `compartment`, `seed`, `steps_per_tick`, `retransmit`, `window`, `loss`, `delay`, `duplicate`, `ring` (`RANKS, ROUNDS`) |
//! | `[event]`  | `at` (scheduler step, or grid tick), `do` (command) |
//!
//! Literals are typed: `u64:7`, `i64:-3`, `f64:0.25`, `f64s:[1, 2.5]`,
//! `bytes:00ff`, `str:"text"` (with `\"` and `\\` escapes).
//!
//! Event commands in a local run are monitor reconfiguration commands (see
//! [`crate::monitor`]). In a grid run they are `checkpoint LABEL`,
//! `restore LABEL [FROM->TO ...]`, `kill NODE`, `migrate BEAD[,BEAD...] FROM TO`
//! and `link LOSS DELAY DUPLICATE`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use weaves_core::grid::ranks::install_ring;
use weaves_core::grid::{Grid, GridConfig, GridEvent, GridEventKind, LinkParams, TransportConfig};
use weaves_core::{value, BeadId, ModuleDef, NodeId, StringId, SymbolName, Tapestry, TupleSpaceDecl, WeaveId};

use crate::builtins::{builtin_function, builtin_names};
use crate::error::{AppError, Result};

pub const HEADER: &str = "weaves-config v1";

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    U64(u64),
    I64(i64),
    F64(f64),
    F64s(Vec<f64>),
    Bytes(Vec<u8>),
    Str(String),
}

impl Literal {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Literal::U64(v) => value::from_u64(*v),
            Literal::I64(v) => v.to_le_bytes().to_vec(),
            Literal::F64(v) => value::from_f64(*v),
            Literal::F64s(v) => value::from_f64s(v),
            Literal::Bytes(b) => b.clone(),
            Literal::Str(s) => s.as_bytes().to_vec(),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::U64(v) => write!(f, "u64:{v}"),
            Literal::I64(v) => write!(f, "i64:{v}"),
            Literal::F64(v) => write!(f, "f64:{v:?}"),
            Literal::F64s(v) => {
                let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                write!(f, "f64s:[{}]", items.join(", "))
            }
            Literal::Bytes(b) => {
                f.write_str("bytes:")?;
                b.iter().try_for_each(|x| write!(f, "{x:02x}"))
            }
            Literal::Str(s) => write!(f, "str:\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FunctionKind {
    Entry,
    Export,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionDecl {
    pub kind: FunctionKind,
    pub name: String,
    pub builtin: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuleDecl {
    pub name: String,
    pub globals: Vec<(String, Literal)>,
    pub functions: Vec<FunctionDecl>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeadDecl {
    pub name: String,
    pub module: String,
    pub node: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeaveDecl {
    pub name: String,
    pub beads: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StringDecl {
    pub weave: String,
    pub entry: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TupleDecl {
    pub beads: Vec<String>,
    pub symbols: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDecl {
    pub nodes: u32,
    pub total_bits: u32,
    pub vm_bits: u32,
    pub compartment: Option<u32>,
    pub seed: u64,
    pub steps_per_tick: u64,
    pub retransmit: u32,
    pub window: u32,
    pub loss: f64,
    pub delay: u32,
    pub duplicate: f64,
    /// Emulated ring of (ranks, rounds).
    pub ring: Option<(u32, u64)>,
}

impl Default for GridDecl {
    fn default() -> Self {
        let g = GridConfig::default();
        GridDecl {
            nodes: 1,
            total_bits: g.total_bits,
            vm_bits: g.vm_bits,
            compartment: g.compartment,
            seed: g.seed,
            steps_per_tick: g.steps_per_tick,
            retransmit: g.transport.retransmit_interval,
            window: g.transport.window,
            loss: g.transport.link.loss,
            delay: g.transport.link.max_delay,
            duplicate: g.transport.link.duplicate,
            ring: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventDecl {
    pub at: u64,
    pub command: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TapestryConfig {
    pub modules: Vec<ModuleDecl>,
    pub beads: Vec<BeadDecl>,
    pub weaves: Vec<WeaveDecl>,
    pub strings: Vec<StringDecl>,
    pub tuples: Vec<TupleDecl>,
    pub grid: Option<GridDecl>,
    pub events: Vec<EventDecl>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    Module,
    Bead,
    Weave,
    String,
    Tuple,
    Grid,
    Event,
}

impl Section {
    fn parse(s: &str) -> Option<Section> {
        Some(match s {
            "module" => Section::Module,
            "bead" => Section::Bead,
            "weave" => Section::Weave,
            "string" => Section::String,
            "tuple" => Section::Tuple,
            "grid" => Section::Grid,
            "event" => Section::Event,
            _ => return None,
        })
    }
}

/// One `key = value` line with positions for error reporting.
#[derive(Clone, Debug)]
struct Entry {
    line: usize,
    key: String,
    key_col: usize,
    value: String,
    value_col: usize,
}

struct Record {
    section: Section,
    line: usize,
    entries: Vec<Entry>,
}

impl Record {
    fn take(&mut self, key: &str) -> Option<Entry> {
        let i = self.entries.iter().position(|e| e.key == key)?;
        Some(self.entries.remove(i))
    }

    fn required(&mut self, key: &str) -> Result<Entry> {
        self.take(key).ok_or_else(|| AppError::parse(self.line, 1, format!("`{key}` in this section")))
    }

    fn finish(self) -> Result<()> {
        match self.entries.first() {
            Some(e) => Err(AppError::parse(e.line, e.key_col, "a key valid in this section")),
            None => Ok(()),
        }
    }
}

/// Byte index of a `#` comment outside string literals.
fn comment_start(line: &str) -> Option<usize> {
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_str => escaped = true,
            '"' => in_str = !in_str,
            '#' if !in_str => return Some(i),
            _ => {}
        }
    }
    None
}

fn col_of(line: &str, byte: usize) -> usize {
    line[..byte].chars().count() + 1
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn name(e: &Entry) -> Result<String> {
    if is_name(&e.value) {
        Ok(e.value.clone())
    } else {
        Err(AppError::parse(e.line, e.value_col, "a name"))
    }
}

fn names(e: &Entry) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in e.value.split(',') {
        let lead = part.len() - part.trim_start().len();
        let item = part.trim();
        if !is_name(item) {
            return Err(AppError::parse(e.line, e.value_col + offset + lead, "a comma-separated list of names"));
        }
        out.push(item.to_string());
        offset += part.chars().count() + 1;
    }
    Ok(out)
}

fn number<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<T> {
    e.value.parse().map_err(|_| AppError::parse(e.line, e.value_col, what))
}

fn probability(e: &Entry) -> Result<f64> {
    let p: f64 = number(e, "a probability")?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(AppError::parse(e.line, e.value_col, "a probability in [0, 1]"))
    }
}

pub fn parse_literal(text: &str, line: usize, col: usize) -> Result<Literal> {
    let err = |expected: &str| AppError::parse(line, col, expected);
    let (ty, rest) = text.split_once(':').ok_or_else(|| err("a typed literal such as u64:0"))?;
    let rest_col = col + ty.chars().count() + 1;
    let bad = |expected: &str| AppError::parse(line, rest_col, expected);
    Ok(match ty {
        "u64" => Literal::U64(rest.parse().map_err(|_| bad("an unsigned integer"))?),
        "i64" => Literal::I64(rest.parse().map_err(|_| bad("an integer"))?),
        "f64" => Literal::F64(rest.parse().map_err(|_| bad("a number"))?),
        "f64s" => {
            let inner = rest
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| bad("a bracketed list of numbers"))?;
            if inner.trim().is_empty() {
                Literal::F64s(Vec::new())
            } else {
                let vals: std::result::Result<Vec<f64>, _> = inner.split(',').map(|x| x.trim().parse()).collect();
                Literal::F64s(vals.map_err(|_| bad("a bracketed list of numbers"))?)
            }
        }
        "bytes" => {
            if rest.len() % 2 != 0 || !rest.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(bad("an even number of hex digits"));
            }
            Literal::Bytes((0..rest.len()).step_by(2).map(|i| u8::from_str_radix(&rest[i..i + 2], 16).unwrap()).collect())
        }
        "str" => {
            let inner = rest
                .strip_prefix('"')
                .and_then(|r| r.strip_suffix('"'))
                .ok_or_else(|| bad("a double-quoted string"))?;
            let mut out = String::new();
            let mut chars = inner.chars();
            while let Some(c) = chars.next() {
                match c {
                    '\\' => match chars.next() {
                        Some(c @ ('"' | '\\')) => out.push(c),
                        _ => return Err(bad("only \\\" and \\\\ escapes")),
                    },
                    '"' => return Err(bad("an escaped quote")),
                    c => out.push(c),
                }
            }
            Literal::Str(out)
        }
        _ => return Err(err("a literal type: u64, i64, f64, f64s, bytes or str")),
    })
}

fn split_records(text: &str) -> Result<Vec<Record>> {
    let mut lines = text.lines().enumerate();
    let header = lines.by_ref().find(|(_, l)| {
        let l = &l[..comment_start(l).unwrap_or(l.len())];
        !l.trim().is_empty()
    });
    match header {
        Some((_, l)) if l[..comment_start(l).unwrap_or(l.len())].trim() == HEADER => {}
        Some((i, _)) => return Err(AppError::parse(i + 1, 1, format!("`{HEADER}` header"))),
        None => return Err(AppError::parse(1, 1, format!("`{HEADER}` header"))),
    }
    let mut records: Vec<Record> = Vec::new();
    for (i, raw) in lines {
        let n = i + 1;
        let body = &raw[..comment_start(raw).unwrap_or(raw.len())];
        let trimmed = body.trim();
        if trimmed.is_empty() {
            continue;
        }
        let lead = body.len() - body.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let inner = rest
                .strip_suffix(']')
                .ok_or_else(|| AppError::parse(n, col_of(raw, lead) + trimmed.chars().count(), "`]`"))?;
            let section = Section::parse(inner.trim())
                .ok_or_else(|| AppError::parse(n, col_of(raw, lead) + 1, "a section: module, bead, weave, string, tuple, grid or event"))?;
            records.push(Record {
                section,
                line: n,
                entries: Vec::new(),
            });
            continue;
        }
        let Some(record) = records.last_mut() else {
            return Err(AppError::parse(n, col_of(raw, lead), "a section header"));
        };
        let eq = body.find('=').ok_or_else(|| AppError::parse(n, col_of(raw, lead) + trimmed.chars().count(), "`=`"))?;
        let key = body[..eq].trim();
        if key.is_empty() {
            return Err(AppError::parse(n, col_of(raw, eq), "a key"));
        }
        let after = &body[eq + 1..];
        let value = after.trim();
        let vlead = after.len() - after.trim_start().len();
        if value.is_empty() {
            return Err(AppError::parse(n, col_of(raw, eq + 1) + vlead, "a value"));
        }
        record.entries.push(Entry {
            line: n,
            key: key.split_whitespace().collect::<Vec<_>>().join(" "),
            key_col: col_of(raw, lead),
            value: value.to_string(),
            value_col: col_of(raw, eq + 1 + vlead),
        });
    }
    Ok(records)
}

pub fn parse_tapestry_config(text: &str) -> Result<TapestryConfig> {
    let mut cfg = TapestryConfig::default();
    for mut r in split_records(text)? {
        match r.section {
            Section::Module => {
                let module = name(&r.required("name")?)?;
                let mut m = ModuleDecl {
                    name: module,
                    globals: Vec::new(),
                    functions: Vec::new(),
                };
                for e in std::mem::take(&mut r.entries) {
                    let (kw, sym) = e.key.split_once(' ').ok_or_else(|| AppError::parse(e.line, e.key_col, "`global`, `entry` or `export` followed by a name"))?;
                    let sym_col = e.key_col + kw.chars().count() + 1;
                    if !is_name(sym) {
                        return Err(AppError::parse(e.line, sym_col, "a name"));
                    }
                    match kw {
                        "global" => {
                            if m.globals.iter().any(|(g, _)| g == sym) {
                                return Err(AppError::parse(e.line, sym_col, "a global name not already declared"));
                            }
                            m.globals.push((sym.to_string(), parse_literal(&e.value, e.line, e.value_col)?));
                        }
                        "entry" | "export" => {
                            if m.functions.iter().any(|f| f.name == sym) {
                                return Err(AppError::parse(e.line, sym_col, "a function name not already declared"));
                            }
                            m.functions.push(FunctionDecl {
                                kind: if kw == "entry" { FunctionKind::Entry } else { FunctionKind::Export },
                                name: sym.to_string(),
                                builtin: name(&e)?,
                            });
                        }
                        _ => return Err(AppError::parse(e.line, e.key_col, "`global`, `entry` or `export`")),
                    }
                }
                cfg.modules.push(m);
            }
            Section::Bead => {
                let b = BeadDecl {
                    name: name(&r.required("name")?)?,
                    module: name(&r.required("module")?)?,
                    node: match r.take("node") {
                        Some(e) => number(&e, "a node number")?,
                        None => 0,
                    },
                };
                r.finish()?;
                cfg.beads.push(b);
            }
            Section::Weave => {
                let w = WeaveDecl {
                    name: name(&r.required("name")?)?,
                    beads: names(&r.required("beads")?)?,
                };
                r.finish()?;
                cfg.weaves.push(w);
            }
            Section::String => {
                let s = StringDecl {
                    weave: name(&r.required("weave")?)?,
                    entry: match r.take("entry") {
                        Some(e) => name(&e)?,
                        None => "main".into(),
                    },
                };
                r.finish()?;
                cfg.strings.push(s);
            }
            Section::Tuple => {
                let t = TupleDecl {
                    beads: names(&r.required("beads")?)?,
                    symbols: names(&r.required("symbols")?)?,
                };
                r.finish()?;
                cfg.tuples.push(t);
            }
            Section::Grid => {
                if cfg.grid.is_some() {
                    return Err(AppError::parse(r.line, 1, "at most one [grid] section"));
                }
                let mut g = GridDecl::default();
                for e in std::mem::take(&mut r.entries) {
                    match e.key.as_str() {
                        "nodes" => g.nodes = number(&e, "a node count")?,
                        "total_bits" => g.total_bits = number(&e, "a bit count")?,
                        "vm_bits" => g.vm_bits = number(&e, "a bit count")?,
                        "compartment" => g.compartment = Some(number(&e, "a compartment size")?),
                        "seed" => g.seed = number(&e, "a seed")?,
                        "steps_per_tick" => g.steps_per_tick = number(&e, "a step count")?,
                        "retransmit" => g.retransmit = number(&e, "a tick count")?,
                        "window" => g.window = number(&e, "a window size")?,
                        "loss" => g.loss = probability(&e)?,
                        "delay" => g.delay = number(&e, "a tick count")?,
                        "duplicate" => g.duplicate = probability(&e)?,
                        "ring" => {
                            let parts: Vec<&str> = e.value.split(',').map(str::trim).collect();
                            match parts.as_slice() {
                                [a, b] => match (a.parse(), b.parse()) {
                                    (Ok(a), Ok(b)) => g.ring = Some((a, b)),
                                    _ => return Err(AppError::parse(e.line, e.value_col, "`RANKS, ROUNDS`")),
                                },
                                _ => return Err(AppError::parse(e.line, e.value_col, "`RANKS, ROUNDS`")),
                            }
                        }
                        _ => return Err(AppError::parse(e.line, e.key_col, "a [grid] key")),
                    }
                }
                cfg.grid = Some(g);
            }
            Section::Event => {
                let at = number(&r.required("at")?, "a step or tick number")?;
                let command = r.required("do")?.value;
                r.finish()?;
                cfg.events.push(EventDecl { at, command });
            }
        }
    }
    if cfg.modules.is_empty() {
        return Err(AppError::parse(text.lines().count() + 1, 1, "a [module] section"));
    }
    validate(&cfg)?;
    Ok(cfg)
}

fn unique<'a>(what: &str, items: impl Iterator<Item = &'a String>) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in items {
        if !seen.insert(n) {
            return Err(weaves_core::Error::InvalidDefinition(format!("duplicate {what} `{n}`")).into());
        }
    }
    Ok(())
}

/// Referential closure: every name used is declared.
fn validate(cfg: &TapestryConfig) -> Result<()> {
    unique("module", cfg.modules.iter().map(|m| &m.name))?;
    unique("bead", cfg.beads.iter().map(|b| &b.name))?;
    unique("weave", cfg.weaves.iter().map(|w| &w.name))?;
    let builtins: BTreeSet<&str> = builtin_names().collect();
    for m in &cfg.modules {
        for f in &m.functions {
            if !builtins.contains(f.builtin.as_str()) {
                return Err(AppError::UnresolvedReference(f.builtin.clone()));
            }
        }
    }
    let modules: BTreeMap<&str, &ModuleDecl> = cfg.modules.iter().map(|m| (m.name.as_str(), m)).collect();
    let beads: BTreeMap<&str, &BeadDecl> = cfg.beads.iter().map(|b| (b.name.as_str(), b)).collect();
    for b in &cfg.beads {
        if !modules.contains_key(b.module.as_str()) {
            return Err(AppError::UnresolvedReference(b.module.clone()));
        }
    }
    let weaves: BTreeSet<&str> = cfg.weaves.iter().map(|w| w.name.as_str()).collect();
    for w in &cfg.weaves {
        for b in &w.beads {
            if !beads.contains_key(b.as_str()) {
                return Err(AppError::UnresolvedReference(b.clone()));
            }
        }
    }
    for s in &cfg.strings {
        if !weaves.contains(s.weave.as_str()) {
            return Err(AppError::UnresolvedReference(s.weave.clone()));
        }
    }
    for t in &cfg.tuples {
        for b in &t.beads {
            let decl = beads.get(b.as_str()).ok_or_else(|| AppError::UnresolvedReference(b.clone()))?;
            let m = modules[decl.module.as_str()];
            for sym in &t.symbols {
                if !m.globals.iter().any(|(g, _)| g == sym) {
                    return Err(AppError::UnresolvedReference(format!("{b}.{sym}")));
                }
            }
        }
    }
    Ok(())
}

/// Canonical text: fixed section order, fixed key order, one blank line
/// between sections.
pub fn serialize_tapestry_config(cfg: &TapestryConfig) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let mut section = |title: &str, lines: Vec<String>| {
        let _ = write!(out, "\n[{title}]\n");
        for l in lines {
            out.push_str(&l);
            out.push('\n');
        }
    };
    for m in &cfg.modules {
        let mut lines = vec![format!("name = {}", m.name)];
        lines.extend(m.globals.iter().map(|(g, v)| format!("global {g} = {v}")));
        lines.extend(m.functions.iter().map(|f| {
            let kw = if f.kind == FunctionKind::Entry { "entry" } else { "export" };
            format!("{kw} {} = {}", f.name, f.builtin)
        }));
        section("module", lines);
    }
    for b in &cfg.beads {
        section("bead", vec![format!("name = {}", b.name), format!("module = {}", b.module), format!("node = {}", b.node)]);
    }
    for w in &cfg.weaves {
        section("weave", vec![format!("name = {}", w.name), format!("beads = {}", w.beads.join(", "))]);
    }
    for s in &cfg.strings {
        section("string", vec![format!("weave = {}", s.weave), format!("entry = {}", s.entry)]);
    }
    for t in &cfg.tuples {
        section("tuple", vec![format!("beads = {}", t.beads.join(", ")), format!("symbols = {}", t.symbols.join(", "))]);
    }
    if let Some(g) = &cfg.grid {
        let mut lines = vec![
            format!("nodes = {}", g.nodes),
            format!("total_bits = {}", g.total_bits),
            format!("vm_bits = {}", g.vm_bits),
        ];
        if let Some(c) = g.compartment {
            lines.push(format!("compartment = {c}"));
        }
        lines.extend([
            format!("seed = {}", g.seed),
            format!("steps_per_tick = {}", g.steps_per_tick),
            format!("retransmit = {}", g.retransmit),
            format!("window = {}", g.window),
            format!("loss = {:?}", g.loss),
            format!("delay = {}", g.delay),
            format!("duplicate = {:?}", g.duplicate),
        ]);
        if let Some((r, n)) = g.ring {
            lines.push(format!("ring = {r}, {n}"));
        }
        section("grid", lines);
    }
    for e in &cfg.events {
        section("event", vec![format!("at = {}", e.at), format!("do = {}", e.command)]);
    }
    out
}

pub fn module_def(m: &ModuleDecl) -> Result<ModuleDef> {
    let mut def = ModuleDef::new(&m.name);
    for (g, v) in &m.globals {
        def = def.global(g, v.to_bytes());
    }
    for f in &m.functions {
        let func = builtin_function(&f.name, &f.builtin).ok_or_else(|| AppError::UnresolvedReference(f.builtin.clone()))?;
        def = match f.kind {
            FunctionKind::Entry => def.entry(func),
            FunctionKind::Export => def.export(func),
        };
    }
    Ok(def)
}

/// Name-to-id maps of a loaded tapestry.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Names {
    pub beads: BTreeMap<String, BeadId>,
    pub weaves: BTreeMap<String, WeaveId>,
    pub strings: Vec<StringId>,
}

/// Populate `t` with the beads, weaves, tuples and strings of `cfg` whose
/// beads sit on `node` (all of them when `node` is `None`).
fn populate(t: &mut Tapestry, cfg: &TapestryConfig, node: Option<u32>) -> Result<Names> {
    for m in &cfg.modules {
        t.register_module(module_def(m)?)?;
    }
    let here = |b: &BeadDecl| node.is_none_or(|n| b.node == n);
    let placed: BTreeMap<&str, u32> = cfg.beads.iter().map(|b| (b.name.as_str(), b.node)).collect();
    let mut names = Names::default();
    for b in cfg.beads.iter().filter(|b| here(b)) {
        let m = t.module_id(&b.module)?;
        names.beads.insert(b.name.clone(), t.instantiate_labeled(m, Some(b.name.clone()))?);
    }
    for w in &cfg.weaves {
        let nodes: BTreeSet<u32> = w.beads.iter().map(|b| placed[b.as_str()]).collect();
        if node.is_some() && nodes.len() > 1 {
            return Err(weaves_core::Error::InvalidDefinition(format!("weave `{}` spans several nodes", w.name)).into());
        }
        if node.is_some_and(|n| !nodes.contains(&n)) {
            continue;
        }
        let ids: Vec<BeadId> = w.beads.iter().map(|b| names.beads[b]).collect();
        names.weaves.insert(w.name.clone(), t.define_labeled_weave(&ids, Some(w.name.clone()))?);
    }
    for tu in &cfg.tuples {
        if tu.beads.iter().any(|b| !names.beads.contains_key(b)) {
            continue;
        }
        let symbols = tu.symbols.iter().map(SymbolName::new).collect::<weaves_core::Result<Vec<_>>>()?;
        t.share_tuple(TupleSpaceDecl {
            beads: tu.beads.iter().map(|b| names.beads[b]).collect(),
            symbols,
        })?;
    }
    for s in &cfg.strings {
        if let Some(w) = names.weaves.get(&s.weave) {
            names.strings.push(t.spawn_string(*w, &s.entry)?);
        }
    }
    Ok(names)
}

/// Load every declaration into one tapestry.
pub fn load_tapestry(cfg: &TapestryConfig) -> Result<(Tapestry, Names)> {
    let mut t = Tapestry::default();
    let names = populate(&mut t, cfg, None)?;
    Ok((t, names))
}

/// Parse a grid event command.
pub fn parse_grid_command(cmd: &str, grid: &Grid) -> Result<GridEventKind> {
    let words: Vec<&str> = cmd.split_whitespace().collect();
    let bad = |what: &str| weaves_core::Error::InvalidArgument(format!("grid event `{cmd}`: expected {what}"));
    let node = |s: &str| s.parse::<u32>().map(NodeId).map_err(|_| bad("a node number"));
    Ok(match words.as_slice() {
        ["checkpoint", label] => GridEventKind::Checkpoint(label.to_string()),
        ["restore", label, pairs @ ..] => {
            let mut remap = BTreeMap::new();
            for p in pairs {
                let (a, b) = p.split_once("->").ok_or_else(|| bad("FROM->TO"))?;
                remap.insert(node(a)?, node(b)?);
            }
            GridEventKind::Restore {
                label: label.to_string(),
                remap,
            }
        }
        ["kill", n] => GridEventKind::Kill(node(n)?),
        ["migrate", list, from, to] => {
            let from = node(from)?;
            let t = grid.node(from)?;
            let mut beads = BTreeSet::new();
            for name in list.split(',') {
                let b = t
                    .beads()
                    .find(|b| b.label.as_deref() == Some(name))
                    .ok_or_else(|| AppError::UnresolvedReference(name.into()))?;
                beads.insert(b.id);
            }
            GridEventKind::Migrate { beads, from, to: node(to)? }
        }
        ["link", loss, delay, dup] => GridEventKind::Link(LinkParams {
            loss: loss.parse().map_err(|_| bad("a loss probability"))?,
            max_delay: delay.parse().map_err(|_| bad("a delay"))?,
            duplicate: dup.parse().map_err(|_| bad("a duplicate probability"))?,
        }),
        _ => return Err(bad("checkpoint, restore, kill, migrate or link").into()),
    })
}

/// Build the grid described by the `[grid]` section (one node if absent),
/// with each bead on its declared node and events scheduled.
pub fn load_grid(cfg: &TapestryConfig) -> Result<Grid> {
    let g = cfg.grid.clone().unwrap_or_default();
    let gc = GridConfig {
        total_bits: g.total_bits,
        vm_bits: g.vm_bits,
        compartment: g.compartment,
        transport: TransportConfig {
            retransmit_interval: g.retransmit,
            window: g.window,
            link: LinkParams {
                loss: g.loss,
                max_delay: g.delay,
                duplicate: g.duplicate,
            },
        },
        steps_per_tick: g.steps_per_tick,
        seed: g.seed,
    };
    let mut grid = Grid::new(gc)?;
    if let Some((ranks, rounds)) = g.ring {
        install_ring(&mut grid, ranks, g.nodes, rounds)?;
    }
    let used: BTreeSet<u32> = cfg.beads.iter().map(|b| b.node).collect();
    for n in 0..g.nodes.max(used.iter().max().map_or(0, |m| m + 1)) {
        if grid.node(NodeId(n)).is_err() {
            grid.add_node(NodeId(n))?;
        }
        populate(grid.node_mut(NodeId(n))?, cfg, Some(n))?;
    }
    for e in &cfg.events {
        let kind = parse_grid_command(&e.command, &grid)?;
        grid.schedule(GridEvent { tick: e.at, kind });
    }
    Ok(grid)
}

/// The two-pair tapestry: solvers s1..s4, mediators m12 and m34, one weave
/// and string per solver.
pub const TWO_PAIRS: &str = "weaves-config v1
# two solvers around each of two mediators
[module]
name = solver
global calls = u64:50
global done = u64:0
entry main = caller

[module]
name = mediator
global inside = u64:0
global entries = u64:0
export work = guarded_work

[bead]
name = s1
module = solver
[bead]
name = s2
module = solver
[bead]
name = s3
module = solver
[bead]
name = s4
module = solver
[bead]
name = m12
module = mediator
[bead]
name = m34
module = mediator

[weave]
name = w1
beads = s1, m12
[weave]
name = w2
beads = s2, m12
[weave]
name = w3
beads = s3, m34
[weave]
name = w4
beads = s4, m34

[string]
weave = w1
[string]
weave = w2
[string]
weave = w3
[string]
weave = w4
";
