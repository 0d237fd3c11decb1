use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ids::{Addr, BeadId, ModuleId, StringId, WeaveId};
use crate::model::{Bead, FuncRef, StringTask, Weave};
use crate::namespace::TupleSpaceDecl;
use crate::tapestry::Tapestry;

/// A set of beads closed under weave membership, tuple sharing and
/// allocation references, with the weaves and strings that live on it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Island {
    pub beads: BTreeSet<BeadId>,
    pub weaves: Vec<WeaveId>,
    pub strings: Vec<StringId>,
}

/// Edges between beads that must travel together.
fn coupling(t: &Tapestry) -> Vec<(BeadId, BeadId)> {
    let mut edges = Vec::new();
    for w in t.weaves.values() {
        for p in w.beads.windows(2) {
            edges.push((p[0], p[1]));
        }
    }
    for d in &t.tuples {
        for p in d.beads.windows(2) {
            edges.push((p[0], p[1]));
        }
    }
    // Any aligned word holding the start address of a cell owned by another
    // bead counts as a reference to it.
    let cells = &t.mem.cells;
    for cell in cells.values() {
        for word in cell.value.chunks_exact(8) {
            let a = Addr(u64::from_le_bytes(word.try_into().unwrap()));
            if let Some(target) = cells.get(&a) {
                if target.owner != cell.owner {
                    edges.push((cell.owner, target.owner));
                }
            }
        }
    }
    for b in t.beads.values() {
        for a in b.data_context.values() {
            if let Some(c) = cells.get(a) {
                if c.owner != b.id {
                    edges.push((b.id, c.owner));
                }
            }
        }
    }
    edges
}

fn describe(t: &Tapestry, beads: BTreeSet<BeadId>) -> Island {
    let weaves: Vec<WeaveId> = t
        .weaves
        .values()
        .filter(|w| w.beads.iter().all(|b| beads.contains(b)))
        .map(|w| w.id)
        .collect();
    let strings = t
        .strings
        .values()
        .filter(|s| weaves.contains(&s.weave))
        .map(|s| s.id)
        .collect();
    Island {
        beads,
        weaves,
        strings,
    }
}

fn check_closed(edges: &[(BeadId, BeadId)], beads: &BTreeSet<BeadId>) -> Result<()> {
    for &(u, v) in edges {
        match (beads.contains(&u), beads.contains(&v)) {
            (true, false) => return Err(Error::NotClosed { from: u, to: v }),
            (false, true) => return Err(Error::NotClosed { from: v, to: u }),
            _ => {}
        }
    }
    Ok(())
}

/// Connected components of the bead coupling graph, or the hinted sets
/// after checking that each one is closed.
pub fn identify_islands(t: &Tapestry, hints: Option<&[BTreeSet<BeadId>]>) -> Result<Vec<Island>> {
    let edges = coupling(t);
    if let Some(hints) = hints {
        let mut out = Vec::new();
        for h in hints {
            for b in h {
                t.bead(*b)?;
            }
            check_closed(&edges, h)?;
            out.push(describe(t, h.clone()));
        }
        return Ok(out);
    }
    let mut adj: BTreeMap<BeadId, Vec<BeadId>> = BTreeMap::new();
    for &(u, v) in &edges {
        adj.entry(u).or_default().push(v);
        adj.entry(v).or_default().push(u);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in t.beads.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = alloc::vec![start];
        while let Some(b) = stack.pop() {
            comp.insert(b);
            for n in adj.get(&b).into_iter().flatten() {
                if seen.insert(*n) {
                    stack.push(*n);
                }
            }
        }
        out.push(describe(t, comp));
    }
    Ok(out)
}

/// Identifier translation produced by a transfer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IslandMap {
    pub beads: BTreeMap<BeadId, BeadId>,
    pub weaves: BTreeMap<WeaveId, WeaveId>,
    pub strings: BTreeMap<StringId, StringId>,
}

/// Move an island's beads, cells, weaves and strings from `src` to `dst`.
/// Cell addresses are preserved; bead, weave and string ids are reissued
/// by `dst`, and module ids are matched by module name.
pub fn transfer_island(src: &mut Tapestry, dst: &mut Tapestry, island: &Island) -> Result<IslandMap> {
    for b in &island.beads {
        src.bead(*b)?;
    }
    check_closed(&coupling(src), &island.beads)?;
    let island = describe(src, island.beads.clone());

    for s in &island.strings {
        let st = &src.strings[s].state;
        if st.pending_lock.is_some()
            || matches!(st.waiting, Some(crate::model::Wait::Lock(_)))
            || !src.held_locks(*s).is_empty()
        {
            return Err(Error::InvalidArgument(format!("{s} is involved in locking")));
        }
    }

    // Every module the island touches must exist at the destination.
    let mut used: BTreeSet<ModuleId> = island.beads.iter().map(|b| src.beads[b].module).collect();
    for w in &island.weaves {
        used.extend(src.tables[w].functions.bindings.values().map(|b| b.func.module));
    }
    for s in &island.strings {
        used.extend(src.strings[s].state.frames.iter().map(|f| f.func.module));
    }
    let mut modules: BTreeMap<ModuleId, ModuleId> = BTreeMap::new();
    for m in used {
        let name: &String = &src.modules[m.index()].def.name;
        let there = dst
            .module_id(name)
            .map_err(|_| Error::MissingModule(name.clone()))?;
        modules.insert(m, there);
    }
    let func = |f: FuncRef| FuncRef {
        module: modules[&f.module],
        slot: f.slot,
    };

    let addrs: Vec<Addr> = src
        .mem
        .cells
        .iter()
        .filter(|(_, c)| island.beads.contains(&c.owner))
        .map(|(a, _)| *a)
        .collect();
    if addrs.iter().any(|a| dst.mem.cells.contains_key(a)) {
        return Err(Error::RegionOverflow);
    }
    let footprint = src.mem.footprint(|b| island.beads.contains(&b));
    if footprint > 0 {
        dst.mem.region_mut().reserve(footprint)?;
    }

    let mut map = IslandMap::default();
    for b in &island.beads {
        map.beads.insert(*b, BeadId(dst.next_bead));
        dst.next_bead += 1;
    }
    for a in addrs {
        let (cell, rec) = src.mem.evict(a);
        let mut cell = cell.unwrap();
        cell.owner = map.beads[&cell.owner];
        let rec = rec.map(|mut r| {
            r.bead = map.beads[&r.bead];
            r
        });
        dst.mem.adopt(a, cell, rec);
    }
    // Freed allocation records of island beads move as well.
    let dead: Vec<Addr> = src
        .mem
        .allocs
        .iter()
        .filter(|(_, r)| island.beads.contains(&r.bead))
        .map(|(a, _)| *a)
        .collect();
    for a in dead {
        let mut r = src.mem.allocs.remove(&a).unwrap();
        r.bead = map.beads[&r.bead];
        dst.mem.allocs.insert(a, r);
    }

    for b in &island.beads {
        let old = src.beads.remove(b).unwrap();
        let id = map.beads[b];
        dst.beads.insert(
            id,
            Bead {
                id,
                module: modules[&old.module],
                label: old.label,
                data_context: old.data_context,
            },
        );
    }
    for w in &island.weaves {
        let old = src.weaves.remove(w).unwrap();
        let id = WeaveId(dst.next_weave);
        dst.next_weave += 1;
        map.weaves.insert(*w, id);
        dst.weaves.insert(
            id,
            Weave {
                id,
                label: old.label,
                beads: old.beads.iter().map(|b| map.beads[b]).collect(),
            },
        );
        let mut table = Arc::unwrap_or_clone(src.tables.remove(w).unwrap());
        table.weave = id;
        for binding in table.functions.bindings.values_mut() {
            binding.bead = map.beads[&binding.bead];
            binding.func = func(binding.func);
        }
        dst.tables.insert(id, Arc::new(table));
    }
    let (moving, staying): (Vec<TupleSpaceDecl>, Vec<TupleSpaceDecl>) = core::mem::take(&mut src.tuples)
        .into_iter()
        .partition(|d| d.beads.iter().all(|b| island.beads.contains(b)));
    src.tuples = staying;
    for mut d in moving {
        d.beads = d.beads.iter().map(|b| map.beads[b]).collect();
        dst.tuples.push(d);
    }
    for s in &island.strings {
        let old = src.strings.remove(s).unwrap();
        let id = StringId(dst.next_string);
        dst.next_string += 1;
        map.strings.insert(*s, id);
        let mut state = old.state;
        for f in &mut state.frames {
            f.bead = map.beads[&f.bead];
            f.func = func(f.func);
        }
        dst.strings.insert(
            id,
            StringTask {
                id,
                weave: map.weaves[&old.weave],
                entry: old.entry,
                state,
                spawn_frame: old.spawn_frame,
            },
        );
    }
    dst.started |= src.started && !island.strings.is_empty();
    src.reclassify();
    dst.reclassify();
    Ok(map)
}
