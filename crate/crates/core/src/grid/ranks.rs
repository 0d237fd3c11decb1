//! Emulated message-passing ranks: a ring exchange followed by a barrier,
//! repeated for a number of rounds. Used to exercise the transport and
//! partial checkpoints.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Exec, Step};
use crate::ids::{ChannelId, NodeId};
use crate::model::{Function, ModuleDef, Signature};
use crate::value;

use super::sim::{Grid, Rank};

/// Local update of a rank's value at the start of a round.
pub fn ring_advance(v: u64, round: u64) -> u64 {
    v.wrapping_mul(6364136223846793005).wrapping_add(round ^ 0x9e37_79b9)
}

/// Combination with the value received from the left neighbour.
pub fn ring_combine(own: u64, left: u64) -> u64 {
    own ^ left.rotate_left(17)
}

fn ring_channel(from: u32) -> ChannelId {
    ChannelId(from)
}

fn up_channel(size: u32, from: u32) -> ChannelId {
    ChannelId(size + from)
}

fn down_channel(size: u32, to: u32) -> ChannelId {
    ChannelId(2 * size + to)
}

fn word(payload: &[u8]) -> Result<u64> {
    value::to_u64(payload)
}

fn rank_body(ex: &mut Exec<'_>) -> Result<Step> {
    let me = ex.read_u64("rank")? as u32;
    let size = ex.read_u64("size")? as u32;
    let rounds = ex.read_u64("rounds")?;
    let round = ex.read_u64("round")?;
    let left = (me + size - 1) % size;
    match ex.pc() {
        0 => {
            if round == rounds {
                return Ok(Step::ret());
            }
            let v = ring_advance(ex.read_u64("value")?, round);
            ex.write_u64("value", v)?;
            ex.send(ring_channel(me), value::from_u64(v));
            ex.advance();
            Ok(Step::Continue)
        }
        1 => {
            let Some(p) = ex.recv(ring_channel(left)) else {
                return Ok(Step::Wait(ring_channel(left)));
            };
            let v = ring_combine(ex.read_u64("value")?, word(&p)?);
            ex.write_u64("value", v)?;
            if me != 0 {
                ex.send(up_channel(size, me), value::from_u64(round));
            }
            ex.set_reg(0, 1);
            ex.advance();
            Ok(Step::Continue)
        }
        2 if me == 0 => {
            // gather one arrival from every other rank, in rank order
            let from = ex.reg(0) as u32;
            if from < size {
                let ch = up_channel(size, from);
                let Some(p) = ex.recv(ch) else {
                    return Ok(Step::Wait(ch));
                };
                if word(&p)? != round {
                    return Err(Error::InvalidArgument("barrier round mismatch".into()));
                }
                ex.set_reg(0, from as u64 + 1);
                return Ok(Step::Continue);
            }
            for to in 1..size {
                ex.send(down_channel(size, to), value::from_u64(round));
            }
            ex.write_u64("round", round + 1)?;
            ex.set_pc(0);
            Ok(Step::Continue)
        }
        _ => {
            let ch = down_channel(size, me);
            let Some(p) = ex.recv(ch) else {
                return Ok(Step::Wait(ch));
            };
            if word(&p)? != round {
                return Err(Error::InvalidArgument("barrier round mismatch".into()));
            }
            ex.write_u64("round", round + 1)?;
            ex.set_pc(0);
            Ok(Step::Continue)
        }
    }
}

pub fn rank_module() -> ModuleDef {
    ModuleDef::new("rank")
        .global("rank", value::from_u64(0))
        .global("size", value::from_u64(1))
        .global("rounds", value::from_u64(0))
        .global("round", value::from_u64(0))
        .global("value", value::from_u64(0))
        .entry(Function::new("main", Signature::default(), rank_body))
}

/// Seed value of a rank.
pub fn ring_seed(rank: u32) -> u64 {
    rank as u64 + 1
}

/// Place `size` ranks round-robin on nodes `0..nodes` and wire the ring and
/// barrier channels.
pub fn install_ring(grid: &mut Grid, size: u32, nodes: u32, rounds: u64) -> Result<()> {
    if size < 2 || nodes == 0 {
        return Err(Error::InvalidArgument("a ring needs two ranks and a node".into()));
    }
    for n in 0..nodes {
        let t = grid.add_node(NodeId(n))?;
        t.register_module(rank_module())?;
    }
    for r in 0..size {
        let node = NodeId(r % nodes);
        grid.bind_rank(Rank(r), node);
        let t = grid.node_mut(node)?;
        let m = t.module_id("rank")?;
        let b = t.instantiate_labeled(m, Some(alloc::format!("rank{r}")))?;
        t.write_bead_value(b, "rank", value::from_u64(r as u64))?;
        t.write_bead_value(b, "size", value::from_u64(size as u64))?;
        t.write_bead_value(b, "rounds", value::from_u64(rounds))?;
        t.write_bead_value(b, "value", value::from_u64(ring_seed(r)))?;
        let w = t.define_weave(&[b])?;
        t.spawn_string(w, "main")?;
    }
    for r in 0..size {
        grid.open_channel(ring_channel(r), Rank(r), Rank((r + 1) % size));
        if r != 0 {
            grid.open_channel(up_channel(size, r), Rank(r), Rank(0));
            grid.open_channel(down_channel(size, r), Rank(0), Rank(r));
        }
    }
    Ok(())
}

/// Final (rank, round, value) of every rank, in rank order.
pub fn ring_state(grid: &Grid) -> Result<Vec<(u64, u64, u64)>> {
    let mut out = Vec::new();
    for (_, t) in grid.nodes() {
        for b in t.beads() {
            let read = |s: &str| t.bead_value(b.id, s).and_then(value::to_u64);
            out.push((read("rank")?, read("round")?, read("value")?));
        }
    }
    out.sort();
    Ok(out)
}
