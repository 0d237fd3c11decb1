//! Cooperative scheduling of strings with simulated preemption.
//!
//! Strings are grouped into equivalence classes (transitive bead sharing).
//! A string that is preempted while inside a shared bead pins its class:
//! until it leaves the bead no other string of the class is dispatched.
//! Leaving the outermost shared bead ends the dispatch (continuation yield).

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec::{Exec, Step};
use crate::ids::{BeadId, ClassId, StringId};
use crate::model::{Frame, Status, Wait};
use crate::tapestry::Tapestry;
use crate::trace::Event;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    RoundRobinClasses,
    SeededRandom,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::RoundRobinClasses => "round_robin_classes",
            Policy::SeededRandom => "seeded_random",
        }
    }

    pub fn parse(s: &str) -> Option<Policy> {
        match s {
            "round_robin_classes" => Some(Policy::RoundRobinClasses),
            "seeded_random" => Some(Policy::SeededRandom),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SchedState {
    pub(crate) policy: Policy,
    pub(crate) quantum: u32,
    pub(crate) seed: u64,
    rng: ChaCha8Rng,
    /// Global step counter.
    pub(crate) step: u64,
    pub(crate) dispatches: u64,
    class_of: BTreeMap<StringId, ClassId>,
    classes: Vec<Vec<StringId>>,
    shared: BTreeSet<BeadId>,
    queues: BTreeMap<ClassId, VecDeque<StringId>>,
    pins: BTreeMap<ClassId, StringId>,
    tickets: BTreeMap<StringId, u64>,
    next_ticket: u64,
    last_class: Option<ClassId>,
    active: Option<StringId>,
}

impl SchedState {
    pub fn new(policy: Policy, quantum: u32, seed: u64) -> Self {
        SchedState {
            policy,
            quantum: quantum.max(1),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
            dispatches: 0,
            class_of: BTreeMap::new(),
            classes: Vec::new(),
            shared: BTreeSet::new(),
            queues: BTreeMap::new(),
            pins: BTreeMap::new(),
            tickets: BTreeMap::new(),
            next_ticket: 0,
            last_class: None,
            active: None,
        }
    }

    pub fn class_of(&self, s: StringId) -> Option<ClassId> {
        self.class_of.get(&s).copied()
    }

    pub fn classes(&self) -> &[Vec<StringId>] {
        &self.classes
    }

    pub fn is_shared(&self, b: BeadId) -> bool {
        self.shared.contains(&b)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dispatches(&self) -> u64 {
        self.dispatches
    }

    pub fn active(&self) -> Option<StringId> {
        self.active
    }

    fn enqueue(&mut self, s: StringId) {
        let Some(c) = self.class_of(s) else { return };
        self.tickets.insert(s, self.next_ticket);
        self.next_ticket += 1;
        self.queues.entry(c).or_default().push_back(s);
    }

    fn unqueue(&mut self, s: StringId) {
        if let Some(c) = self.class_of(s) {
            if let Some(q) = self.queues.get_mut(&c) {
                q.retain(|x| *x != s);
            }
        }
    }

    /// Eligible strings of a class: the pinned one if the class is pinned,
    /// otherwise the queue.
    fn eligible_front(&self, c: ClassId) -> Option<StringId> {
        let q = self.queues.get(&c)?;
        match self.pins.get(&c) {
            Some(p) => q.contains(p).then_some(*p),
            None => q.front().copied(),
        }
    }

    fn pick(&mut self) -> Option<StringId> {
        match self.policy {
            Policy::RoundRobinClasses => {
                use core::ops::Bound::{Excluded, Unbounded};
                let (hi, lo) = match self.last_class {
                    Some(a) => (self.queues.range((Excluded(a), Unbounded)), self.queues.range(..=a)),
                    None => (self.queues.range(..), self.queues.range(..ClassId(0))),
                };
                hi.chain(lo).find_map(|(c, _)| self.eligible_front(*c))
            }
            Policy::SeededRandom => {
                let mut eligible = Vec::new();
                for (c, q) in &self.queues {
                    match self.pins.get(c) {
                        Some(p) if q.contains(p) => eligible.push(*p),
                        Some(_) => {}
                        None => eligible.extend(q.iter().copied()),
                    }
                }
                if eligible.is_empty() {
                    return None;
                }
                eligible.sort();
                let i = self.rng.gen_range(0..eligible.len());
                Some(eligible[i])
            }
        }
    }
}

/// Scheduler position: the partition, queue order, pins, round-robin
/// cursor and random stream. Restoring it makes a resumed run dispatch
/// exactly as the original would have.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SchedCursor {
    pub policy: Policy,
    pub seed: u64,
    pub rng_word_pos: u128,
    pub classes: Vec<Vec<StringId>>,
    pub pins: Vec<(ClassId, StringId)>,
    pub tickets: Vec<(StringId, u64)>,
    pub next_ticket: u64,
    pub last_class: Option<ClassId>,
}

impl SchedState {
    pub fn cursor(&self) -> SchedCursor {
        SchedCursor {
            policy: self.policy,
            seed: self.seed,
            rng_word_pos: self.rng.get_word_pos(),
            classes: self.classes.clone(),
            pins: self.pins.iter().map(|(c, s)| (*c, *s)).collect(),
            tickets: self.tickets.iter().map(|(s, t)| (*s, *t)).collect(),
            next_ticket: self.next_ticket,
            last_class: self.last_class,
        }
    }
}

impl Tapestry {
    pub(crate) fn check_cursor(&self, c: &SchedCursor) -> Result<BTreeMap<StringId, ClassId>> {
        let mut class_of = BTreeMap::new();
        for (i, members) in c.classes.iter().enumerate() {
            for s in members {
                if !self.strings.contains_key(s) || class_of.insert(*s, ClassId(i as u32)).is_some() {
                    return Err(Error::InvalidArgument(alloc::format!("bad class member {s}")));
                }
            }
        }
        if c.pins.iter().any(|(k, s)| class_of.get(s) != Some(k)) {
            return Err(Error::InvalidArgument("pin outside its class".into()));
        }
        Ok(class_of)
    }

    /// Adopt a saved scheduler position. Shared beads are recomputed; the
    /// queues are rebuilt in ticket order.
    pub(crate) fn install_cursor(&mut self, c: SchedCursor) -> Result<()> {
        let class_of = self.check_cursor(&c)?;
        self.reclassify();
        let sched = &mut self.sched;
        sched.policy = c.policy;
        sched.seed = c.seed;
        sched.rng = ChaCha8Rng::seed_from_u64(c.seed);
        sched.rng.set_word_pos(c.rng_word_pos);
        sched.class_of = class_of;
        sched.classes = c.classes;
        sched.tickets = c.tickets.into_iter().collect();
        sched.next_ticket = c.next_ticket;
        sched.last_class = c.last_class;
        self.rebuild_queues();
        self.sched.pins = c.pins.into_iter().collect();
        Ok(())
    }
}

/// Brute-force-free union-find over bead ids.
struct Dsu {
    parent: BTreeMap<BeadId, BeadId>,
}

impl Dsu {
    fn new() -> Self {
        Dsu {
            parent: BTreeMap::new(),
        }
    }

    fn find(&mut self, b: BeadId) -> BeadId {
        let p = *self.parent.entry(b).or_insert(b);
        if p == b {
            return b;
        }
        let r = self.find(p);
        self.parent.insert(b, r);
        r
    }

    fn union(&mut self, a: BeadId, b: BeadId) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent.insert(hi, lo);
        }
    }
}

/// Outcome of [`Tapestry::run`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunOutcome {
    /// Every string finished or failed.
    Done,
    /// Nothing runnable, but strings wait on channels.
    Waiting,
    /// The step or dispatch budget ran out.
    Budget,
}

/// Why a dispatch ended.
enum Stop {
    Quantum,
    Yield,
    Continuation,
    Blocked,
    Finished,
    Failed(String),
}

impl Tapestry {
    pub fn scheduler(&self) -> &crate::sched::SchedState {
        &self.sched
    }

    pub fn trace(&self) -> &crate::trace::Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut crate::trace::Trace {
        &mut self.trace
    }

    pub(crate) fn trace_event(&mut self, event: Event, s: StringId, reason: &str) {
        if self.trace.is_enabled() {
            let class = self.sched.class_of(s);
            self.trace.push(self.sched.step, event, s, class, reason);
        }
    }

    /// Live strings partitioned by transitive bead sharing, lowest member
    /// first; class ids follow the order of their lowest member.
    pub fn equivalence_classes(&self) -> Vec<Vec<StringId>> {
        self.sched
            .classes
            .iter()
            .filter(|c| !c.is_empty())
            .cloned()
            .collect()
    }

    /// Recompute classes, shared beads, pins and run queues from string
    /// state. Called after every structural change.
    pub(crate) fn reclassify(&mut self) {
        let mut tuple = Dsu::new();
        for t in &self.tuples {
            for w in t.beads.windows(2) {
                tuple.union(w[0], w[1]);
            }
        }
        let mut classes = Dsu::new();
        let mut touch: BTreeMap<BeadId, BTreeSet<StringId>> = BTreeMap::new();
        let live: Vec<(StringId, Vec<BeadId>)> = self
            .strings
            .values()
            .filter(|s| s.state.status.is_live())
            .map(|s| (s.id, self.weaves[&s.weave].beads.clone()))
            .collect();
        for (sid, beads) in &live {
            for b in beads {
                let g = tuple.find(*b);
                classes.union(beads[0], g);
                classes.union(*b, g);
                touch.entry(g).or_default().insert(*sid);
            }
        }
        let mut shared = BTreeSet::new();
        for b in self.beads.keys() {
            let g = tuple.find(*b);
            if touch.get(&g).is_some_and(|s| s.len() >= 2) {
                shared.insert(*b);
            }
        }
        let mut class_ids: BTreeMap<BeadId, ClassId> = BTreeMap::new();
        let mut class_of = BTreeMap::new();
        let mut members: Vec<Vec<StringId>> = Vec::new();
        for (sid, beads) in &live {
            let root = classes.find(beads[0]);
            let c = *class_ids.entry(root).or_insert_with(|| {
                members.push(Vec::new());
                ClassId(members.len() as u32 - 1)
            });
            members[c.index()].push(*sid);
            class_of.insert(*sid, c);
        }
        self.sched.class_of = class_of;
        self.sched.classes = members;
        self.sched.shared = shared;
        self.rebuild_queues();
    }

    fn rebuild_queues(&mut self) {
        let mut runnable: Vec<(u64, StringId)> = Vec::new();
        let mut pins = BTreeMap::new();
        let mut wake = Vec::new();
        for s in self.strings.values() {
            let st = &s.state;
            if !st.status.is_live() || Some(s.id) == self.sched.active {
                continue;
            }
            if st.shared_bead_depth > 0 {
                if let Some(c) = self.sched.class_of(s.id) {
                    pins.entry(c).or_insert(s.id);
                }
            }
            match st.status {
                Status::Ready | Status::Running => {
                    let t = self.sched.tickets.get(&s.id).copied().unwrap_or(u64::MAX);
                    runnable.push((t, s.id));
                }
                Status::Blocked => {
                    if let Some(Wait::Channel(ch)) = st.waiting {
                        if self.mailbox.has_message(ch) {
                            wake.push(s.id);
                        }
                    }
                }
                _ => {}
            }
        }
        runnable.sort();
        self.sched.queues.clear();
        self.sched.pins = pins;
        // renumber so ticket order always matches queue order; a saved
        // cursor then rebuilds the same queues
        for (_, s) in runnable {
            let c = self.sched.class_of(s).unwrap();
            self.sched.tickets.insert(s, self.sched.next_ticket);
            self.sched.next_ticket += 1;
            self.sched.queues.entry(c).or_default().push_back(s);
        }
        for s in wake {
            self.make_runnable(s);
        }
    }

    /// Drop a finished string from the partition. A singleton class is
    /// emptied in place; otherwise sharing may have changed and everything
    /// is recomputed.
    fn retire(&mut self, s: StringId) {
        let Some(c) = self.sched.class_of(s) else { return };
        if self.sched.classes[c.index()].len() == 1 {
            self.sched.classes[c.index()].clear();
            self.sched.class_of.remove(&s);
            self.sched.queues.remove(&c);
            self.sched.pins.remove(&c);
        } else {
            self.reclassify();
        }
    }

    /// Put a string back in its class queue with the status its depth
    /// implies.
    pub(crate) fn make_runnable(&mut self, s: StringId) {
        let task = self.strings.get_mut(&s).unwrap();
        task.state.waiting = None;
        task.state.status = if task.state.shared_bead_depth > 0 {
            Status::Running
        } else {
            Status::Ready
        };
        self.sched.unqueue(s);
        self.sched.enqueue(s);
    }

    /// Hand a message to the node's inbox and wake strings waiting on it.
    pub fn deliver(&mut self, ch: crate::ids::ChannelId, payload: Vec<u8>) {
        self.mailbox.inbox.entry(ch).or_default().push_back(payload);
        let waiters: Vec<StringId> = self
            .strings
            .values()
            .filter(|s| {
                s.state.status == Status::Blocked && s.state.waiting == Some(Wait::Channel(ch))
            })
            .map(|s| s.id)
            .collect();
        for s in waiters {
            self.trace_event(Event::Wake, s, "message");
            self.make_runnable(s);
        }
    }

    pub fn take_outbox(&mut self) -> Vec<(crate::ids::ChannelId, Vec<u8>)> {
        core::mem::take(&mut self.mailbox.outbox)
    }

    pub fn all_done(&self) -> bool {
        self.strings.values().all(|s| !s.state.status.is_live())
    }

    /// Run until every string is done, nothing can run, or `max_steps`
    /// steps have executed. A deadlock cycle is broken by rolling back a
    /// victim; a blocked state with no cycle is unrecoverable.
    pub fn run(&mut self, max_steps: Option<u64>) -> Result<RunOutcome> {
        self.run_bounded(max_steps, None)
    }

    /// Like [`run`](Self::run), but stops after `max_dispatches` whole
    /// dispatches, so no quantum is cut short.
    pub fn run_dispatches(&mut self, max_dispatches: u64) -> Result<RunOutcome> {
        self.run_bounded(None, Some(max_dispatches))
    }

    fn run_bounded(&mut self, max_steps: Option<u64>, max_dispatches: Option<u64>) -> Result<RunOutcome> {
        self.started = true;
        let limit = max_steps.map(|m| self.sched.step.saturating_add(m));
        let dispatch_limit = max_dispatches.map(|m| self.sched.dispatches.saturating_add(m));
        loop {
            if limit.is_some_and(|l| self.sched.step >= l)
                || dispatch_limit.is_some_and(|l| self.sched.dispatches >= l)
            {
                return Ok(RunOutcome::Budget);
            }
            let Some(s) = self.sched.pick() else {
                if self.all_done() {
                    return Ok(RunOutcome::Done);
                }
                if let Some(cycle) = self.detect_deadlock() {
                    let victim = cycle[0].0;
                    self.trace_event(Event::Deadlock, victim, "cycle");
                    self.recover(&cycle)?;
                    continue;
                }
                let channel_wait = self.strings.values().any(|t| {
                    t.state.status == Status::Blocked
                        && matches!(t.state.waiting, Some(Wait::Channel(_)))
                });
                if channel_wait {
                    return Ok(RunOutcome::Waiting);
                }
                return Err(Error::Unrecoverable);
            };
            let budget = match limit {
                Some(l) => (l - self.sched.step).min(self.sched.quantum as u64),
                None => self.sched.quantum as u64,
            };
            self.dispatch(s, budget)?;
        }
    }

    fn dispatch(&mut self, s: StringId, budget: u64) -> Result<()> {
        self.sched.unqueue(s);
        self.sched.active = Some(s);
        self.sched.dispatches += 1;
        let class = self.sched.class_of(s);
        self.sched.last_class = class;
        let weave = self.strings[&s].weave;
        let table = self.tables[&weave].clone();
        self.active.activate(table.clone());
        {
            let task = self.strings.get_mut(&s).unwrap();
            task.state.status = Status::Running;
        }
        self.trace_event(Event::Dispatch, s, "pick");

        let mut stop = Stop::Quantum;
        let mut used = 0u64;
        while used < budget {
            // a lock requested by a restored string is re-requested first
            if let Some(l) = self.strings[&s].state.pending_lock {
                match self.request_lock(s, l) {
                    Ok(true) => {}
                    Ok(false) => {
                        stop = Stop::Blocked;
                        break;
                    }
                    Err(e) => {
                        stop = Stop::Failed(alloc::format!("{e}"));
                        break;
                    }
                }
            }
            self.sched.step += 1;
            used += 1;
            let task = self.strings.get_mut(&s).unwrap();
            task.state.steps += 1;
            let frame = task.state.frames.last_mut().unwrap();
            let module = &self.modules[frame.func.module.index()];
            let Some(f) = module.function(frame.func.slot) else {
                stop = Stop::Failed("missing function".into());
                break;
            };
            let body = f.body.clone();
            let mut ex = Exec {
                string: s,
                frame,
                table: &table,
                mem: &mut self.mem,
                mailbox: &mut self.mailbox,
                step: self.sched.step,
            };
            let step = match body(&mut ex) {
                Ok(step) => step,
                Err(e) => {
                    stop = Stop::Failed(alloc::format!("{e}"));
                    break;
                }
            };
            match step {
                Step::Continue => {}
                Step::Yield => {
                    stop = Stop::Yield;
                    break;
                }
                Step::Call { func, args } => {
                    let Some(binding) = table.functions.get(&func).copied() else {
                        stop = Stop::Failed(alloc::format!("unbound function `{func}`"));
                        break;
                    };
                    let shared = self.sched.is_shared(binding.bead);
                    let task = self.strings.get_mut(&s).unwrap();
                    task.state.frames.push(Frame {
                        bead: binding.bead,
                        func: binding.func,
                        pc: 0,
                        regs: args,
                        ret: Vec::new(),
                        shared,
                    });
                    if shared {
                        task.state.shared_bead_depth += 1;
                    }
                }
                Step::Return(vals) => {
                    let task = self.strings.get_mut(&s).unwrap();
                    let popped = task.state.frames.pop().unwrap();
                    if popped.shared {
                        task.state.shared_bead_depth -= 1;
                    }
                    match task.state.frames.last_mut() {
                        None => {
                            stop = Stop::Finished;
                            break;
                        }
                        Some(caller) => caller.ret = vals,
                    }
                    if popped.shared && task.state.shared_bead_depth == 0 {
                        stop = Stop::Continuation;
                        break;
                    }
                }
                Step::Acquire(l) => match self.request_lock(s, l) {
                    Ok(true) => {}
                    Ok(false) => {
                        stop = Stop::Blocked;
                        break;
                    }
                    Err(e) => {
                        stop = Stop::Failed(alloc::format!("{e}"));
                        break;
                    }
                },
                Step::Release(l) => {
                    if let Err(e) = self.release_lock(s, l) {
                        stop = Stop::Failed(alloc::format!("{e}"));
                        break;
                    }
                }
                Step::Wait(ch) => {
                    if !self.mailbox.has_message(ch) {
                        let task = self.strings.get_mut(&s).unwrap();
                        task.state.status = Status::Blocked;
                        task.state.waiting = Some(Wait::Channel(ch));
                        stop = Stop::Blocked;
                        break;
                    }
                }
            }
        }
        self.sched.active = None;
        self.finish_dispatch(s, class, stop);
        Ok(())
    }

    fn finish_dispatch(&mut self, s: StringId, class: Option<ClassId>, stop: Stop) {
        let depth = self.strings[&s].state.shared_bead_depth;
        if let Some(c) = class {
            if depth > 0 {
                self.sched.pins.insert(c, s);
            } else if self.sched.pins.get(&c) == Some(&s) {
                self.sched.pins.remove(&c);
                // another member parked inside a shared bead (possible after
                // classes merge) takes over the pin
                let next = self.sched.classes[c.index()].iter().copied().find(|m| {
                    self.strings[m].state.shared_bead_depth > 0
                        && self.strings[m].state.status.is_live()
                });
                if let Some(m) = next {
                    self.sched.pins.insert(c, m);
                }
            }
        }
        match stop {
            Stop::Quantum | Stop::Yield | Stop::Continuation => {
                let (event, reason) = match stop {
                    Stop::Quantum => (Event::Preempt, "quantum"),
                    Stop::Yield => (Event::Yield, "explicit"),
                    _ => (Event::ContinuationYield, "shared-exit"),
                };
                self.trace_event(event, s, reason);
                self.make_runnable(s);
            }
            Stop::Blocked => {}
            Stop::Finished => {
                let task = self.strings.get_mut(&s).unwrap();
                task.state.status = Status::Finished;
                self.trace_event(Event::Finish, s, "return");
                self.release_all(s);
                self.retire(s);
            }
            Stop::Failed(reason) => {
                let task = self.strings.get_mut(&s).unwrap();
                task.state.status = Status::Failed;
                task.state.shared_bead_depth = 0;
                let reason = reason.replace(' ', "_");
                self.trace_event(Event::Fail, s, &reason);
                self.release_all(s);
                self.retire(s);
            }
        }
    }
}
