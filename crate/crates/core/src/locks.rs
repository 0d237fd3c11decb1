//! Mutual exclusion locks with acquisition history, wait-graph cycle
//! detection, and victim rollback.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;

use crate::checkpoint::{Mode, Scope, ScopeFilter};
use crate::error::{Error, Result};
use crate::ids::{BeadId, CheckpointId, LockId, StringId};
use crate::model::{Status, Wait};
use crate::tapestry::Tapestry;
use crate::trace::Event;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LockRecord {
    pub id: LockId,
    pub holder: Option<StringId>,
    pub waiters: VecDeque<StringId>,
}

/// One lock request: who asked, from which bead, and the checkpoint taken
/// just before asking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Acquisition {
    pub string: StringId,
    pub bead: BeadId,
    pub lock: LockId,
    pub checkpoint: CheckpointId,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Locks {
    pub(crate) records: BTreeMap<LockId, LockRecord>,
    pub(crate) history: Vec<Acquisition>,
}

impl Locks {
    pub fn record(&self, lock: LockId) -> Option<&LockRecord> {
        self.records.get(&lock)
    }

    pub fn records(&self) -> impl Iterator<Item = &LockRecord> {
        self.records.values()
    }

    pub fn history(&self) -> &[Acquisition] {
        &self.history
    }

    pub fn wait_graph(&self) -> WaitGraph {
        let mut edges = BTreeMap::new();
        for r in self.records.values() {
            if let Some(h) = r.holder {
                for w in &r.waiters {
                    edges.insert(*w, (r.id, h));
                }
            }
        }
        WaitGraph { edges }
    }

    fn entry(&mut self, lock: LockId) -> &mut LockRecord {
        self.records.entry(lock).or_insert_with(|| LockRecord {
            id: lock,
            ..Default::default()
        })
    }
}

/// Waiter → (lock, holder). Each string waits on at most one lock, so every
/// node has out-degree at most one.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct WaitGraph {
    pub edges: BTreeMap<StringId, (LockId, StringId)>,
}

impl WaitGraph {
    /// A cycle as (string, lock it waits on) pairs, starting at the lowest
    /// string id of the cycle. Cycles are searched from the lowest start.
    pub fn find_cycle(&self) -> Option<Vec<(StringId, LockId)>> {
        let mut done = BTreeSet::new();
        for &start in self.edges.keys() {
            if done.contains(&start) {
                continue;
            }
            let mut path: Vec<StringId> = Vec::new();
            let mut on_path = BTreeMap::new();
            let mut cur = start;
            loop {
                if let Some(&pos) = on_path.get(&cur) {
                    let cycle: Vec<(StringId, LockId)> = path[pos..]
                        .iter()
                        .map(|s| (*s, self.edges[s].0))
                        .collect();
                    let min = (0..cycle.len()).min_by_key(|i| cycle[*i].0).unwrap();
                    let mut out = cycle[min..].to_vec();
                    out.extend_from_slice(&cycle[..min]);
                    return Some(out);
                }
                if done.contains(&cur) {
                    break;
                }
                let Some(&(_, next)) = self.edges.get(&cur) else {
                    break;
                };
                on_path.insert(cur, path.len());
                path.push(cur);
                cur = next;
            }
            done.extend(path);
        }
        None
    }
}

pub fn detect_deadlock(locks: &Locks) -> Option<Vec<(StringId, LockId)>> {
    locks.wait_graph().find_cycle()
}

impl Tapestry {
    pub fn locks(&self) -> &Locks {
        &self.locks
    }

    /// Record the request, checkpoint the string's beads, then grant or
    /// enqueue. Returns whether the lock was granted.
    pub(crate) fn request_lock(&mut self, string: StringId, lock: LockId) -> Result<bool> {
        if self.locks.records.get(&lock).and_then(|r| r.holder) == Some(string) {
            return Err(Error::InvalidArgument(alloc::format!(
                "{string} already holds {lock}"
            )));
        }
        let task = self.strings.get_mut(&string).ok_or(Error::UnknownString(string))?;
        task.state.pending_lock = Some(lock);
        let bead = task.state.frames.last().map(|f| f.bead).unwrap_or_default();
        let weave = task.weave;
        let mut resumption = task.state.clone();
        resumption.status = Status::Ready;
        let filter = ScopeFilter {
            beads: Some(self.scope_beads(weave)),
            writer: Some(string),
        };
        let checkpoint = self.mem.take_checkpoint(
            Scope::String(string),
            filter,
            Mode::Cow,
            alloc::vec![(string, resumption)],
        );
        self.locks.history.push(Acquisition {
            string,
            bead,
            lock,
            checkpoint,
        });
        let rec = self.locks.entry(lock);
        if rec.holder.is_none() {
            rec.holder = Some(string);
            let task = self.strings.get_mut(&string).unwrap();
            task.state.pending_lock = None;
            self.trace_event(Event::Acquire, string, "granted");
            Ok(true)
        } else {
            rec.waiters.push_back(string);
            let task = self.strings.get_mut(&string).unwrap();
            task.state.waiting = Some(Wait::Lock(lock));
            task.state.status = Status::Blocked;
            self.trace_event(Event::Block, string, "lock");
            Ok(false)
        }
    }

    /// Release `lock` held by `string`, handing it to the first waiter.
    pub fn release_lock(&mut self, string: StringId, lock: LockId) -> Result<()> {
        let held = self.locks.records.get(&lock).and_then(|r| r.holder);
        if held != Some(string) {
            return Err(Error::NotHolder { string, lock });
        }
        if let Some(pos) = self
            .locks
            .history
            .iter()
            .rposition(|a| a.string == string && a.lock == lock)
        {
            let a = self.locks.history[pos];
            let _ = self.mem.drop_checkpoint(a.checkpoint);
        }
        self.trace_event(Event::Release, string, "release");
        self.hand_over(lock);
        Ok(())
    }

    fn hand_over(&mut self, lock: LockId) {
        let rec = self.locks.entry(lock);
        rec.holder = rec.waiters.pop_front();
        if let Some(next) = rec.holder {
            let task = self.strings.get_mut(&next).unwrap();
            task.state.pending_lock = None;
            task.state.waiting = None;
            self.trace_event(Event::Acquire, next, "handed-over");
            self.make_runnable(next);
        }
    }

    /// Locks currently held by `string`.
    pub fn held_locks(&self, string: StringId) -> Vec<LockId> {
        self.locks
            .records
            .values()
            .filter(|r| r.holder == Some(string))
            .map(|r| r.id)
            .collect()
    }

    pub(crate) fn release_all(&mut self, string: StringId) {
        for l in self.held_locks(string) {
            let _ = self.release_lock(string, l);
        }
        for r in self.locks.records.values_mut() {
            r.waiters.retain(|w| *w != string);
        }
    }

    pub fn detect_deadlock(&self) -> Option<Vec<(StringId, LockId)>> {
        detect_deadlock(&self.locks)
    }

    /// Break `cycle` by rolling its lowest-id string back to the moment it
    /// requested the contested lock it holds, releasing every lock it took
    /// from then on and withdrawing its pending request.
    pub fn recover(&mut self, cycle: &[(StringId, LockId)]) -> Result<StringId> {
        let victim = cycle.iter().map(|(s, _)| *s).min().ok_or(Error::AllBlocked)?;
        // the lock a cycle peer is waiting on that the victim holds
        let contested = cycle
            .iter()
            .map(|(_, l)| *l)
            .find(|l| self.locks.records.get(l).and_then(|r| r.holder) == Some(victim))
            .ok_or(Error::MissingCheckpoint {
                string: victim,
                lock: cycle[0].1,
            })?;
        let pos = self
            .locks
            .history
            .iter()
            .rposition(|a| a.string == victim && a.lock == contested)
            .ok_or(Error::MissingCheckpoint {
                string: victim,
                lock: contested,
            })?;
        let ckpt = self.locks.history[pos].checkpoint;
        let later: BTreeSet<LockId> = self.locks.history[pos..]
            .iter()
            .filter(|a| a.string == victim)
            .map(|a| a.lock)
            .collect();
        let stale: Vec<CheckpointId> = self.locks.history[pos..]
            .iter()
            .filter(|a| a.string == victim)
            .map(|a| a.checkpoint)
            .collect();

        for r in self.locks.records.values_mut() {
            r.waiters.retain(|w| *w != victim);
        }
        let resumption = self.mem.restore_checkpoint(ckpt)?;
        for id in stale {
            let _ = self.mem.drop_checkpoint(id);
        }
        let mut keep = 0;
        self.locks.history.retain(|a| {
            let idx = keep;
            keep += 1;
            !(idx >= pos && a.string == victim)
        });
        for (sid, state) in resumption {
            self.strings.get_mut(&sid).unwrap().state = state;
        }
        self.trace_event(Event::Rollback, victim, "deadlock-victim");
        for l in later {
            if self.locks.records.get(&l).and_then(|r| r.holder) == Some(victim) {
                self.hand_over(l);
            }
        }
        self.make_runnable(victim);
        Ok(victim)
    }
}
