use std::collections::BTreeMap;

use weaves_core::value;
use weaves_core::{
    BeadId, Error, Function, LockId, ModuleDef, Policy, RunOutcome, Signature, Status, Step,
    StringId, Tapestry, TupleSpaceDecl, WeaveId,
};

/// Entry `main`: calls `work` `calls` times (count kept in register 0).
fn caller(name: &str, calls: u64) -> ModuleDef {
    ModuleDef::new(name)
        .global("done", value::from_u64(0))
        .entry(Function::new("main", Signature::default(), move |ex| {
            if ex.pc() == 1 {
                let n = ex.read_u64("done")? + 1;
                ex.write_u64("done", n)?;
                ex.set_pc(0);
            }
            if ex.read_u64("done")? >= calls {
                return Ok(Step::ret());
            }
            ex.set_pc(1);
            Ok(Step::call("work", &[]))
        }))
}

/// Export `work`: three steps inside the bead, asserting no re-entry.
fn shared_bead(name: &str) -> ModuleDef {
    ModuleDef::new(name)
        .global("inside", value::from_u64(0))
        .global("entries", value::from_u64(0))
        .export(Function::new("work", Signature::default(), |ex| match ex.pc() {
            0 => {
                if ex.read_u64("inside")? != 0 {
                    return Err(Error::InvalidArgument("re-entered shared bead".into()));
                }
                ex.write_u64("inside", 1)?;
                let e = ex.read_u64("entries")?;
                ex.write_u64("entries", e + 1)?;
                ex.advance();
                Ok(Step::Continue)
            }
            1 => {
                ex.advance();
                Ok(Step::Continue)
            }
            _ => {
                ex.write_u64("inside", 0)?;
                Ok(Step::ret())
            }
        }))
}

fn spin(name: &str, steps: u32) -> ModuleDef {
    ModuleDef::new(name).entry(Function::new("main", Signature::default(), move |ex| {
        if ex.pc() + 1 >= steps {
            return Ok(Step::ret());
        }
        ex.advance();
        Ok(Step::Continue)
    }))
}

fn dispatch_order(t: &Tapestry) -> Vec<StringId> {
    t.trace()
        .lines()
        .iter()
        .filter(|l| l.event.as_str() == "dispatch")
        .map(|l| l.string)
        .collect()
}

#[test]
fn singleton_classes_alternate_strictly() {
    let mut t = Tapestry::default();
    let m = t.register_module(spin("spin", 4)).unwrap();
    let a = t.instantiate_bead(m).unwrap();
    let b = t.instantiate_bead(m).unwrap();
    let wa = t.define_weave(&[a]).unwrap();
    let wb = t.define_weave(&[b]).unwrap();
    let s0 = t.spawn_string(wa, "main").unwrap();
    let s1 = t.spawn_string(wb, "main").unwrap();
    t.set_quantum(1).unwrap();
    assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
    assert_eq!(
        dispatch_order(&t),
        vec![s0, s1, s0, s1, s0, s1, s0, s1]
    );
}

/// Two strings, each on its own caller bead, sharing one bead.
fn pair(calls: u64) -> (Tapestry, Vec<StringId>, BeadId) {
    let mut t = Tapestry::default();
    let c = t.register_module(caller("client", calls)).unwrap();
    let s = t.register_module(shared_bead("shared")).unwrap();
    let m = t.instantiate_bead(s).unwrap();
    let mut strings = Vec::new();
    for _ in 0..2 {
        let b = t.instantiate_bead(c).unwrap();
        let w = t.define_weave(&[b, m]).unwrap();
        strings.push(t.spawn_string(w, "main").unwrap());
    }
    (t, strings, m)
}

#[test]
fn parked_string_pins_its_class() {
    let (mut t, s, _) = pair(2);
    assert_eq!(t.equivalence_classes(), vec![vec![s[0], s[1]]]);
    // quantum 2: s0 calls and is preempted inside the shared bead
    t.set_quantum(2).unwrap();
    t.run(Some(2)).unwrap();
    let st = t.string(s[0]).unwrap();
    assert_eq!(st.shared_bead_depth(), 1);
    assert_eq!(st.status(), Status::Running);
    t.run(Some(2)).unwrap();
    assert_eq!(dispatch_order(&t), vec![s[0], s[0]]);
    assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
}

#[test]
fn continuation_yield_lets_peer_in() {
    let (mut t, s, _) = pair(3);
    t.set_quantum(1000).unwrap();
    assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
    let order = dispatch_order(&t);
    // each shared exit ends the dispatch and the peer goes next
    assert_eq!(&order[..6], &[s[0], s[1], s[0], s[1], s[0], s[1]]);
    let yields = t
        .trace()
        .lines()
        .iter()
        .filter(|l| l.event.as_str() == "continuation-yield")
        .count();
    assert_eq!(yields, 6);
}

#[test]
fn nested_shared_calls_yield_only_at_outermost_exit() {
    let mut t = Tapestry::default();
    let outer = ModuleDef::new("outer").export(Function::new(
        "outer",
        Signature::default(),
        |ex| match ex.pc() {
            0 => {
                ex.advance();
                Ok(Step::call("work", &[]))
            }
            _ => Ok(Step::ret()),
        },
    ));
    let main = ModuleDef::new("main").entry(Function::new("main", Signature::default(), |ex| {
        match ex.pc() {
            0 => {
                ex.advance();
                Ok(Step::call("outer", &[]))
            }
            _ => Ok(Step::ret()),
        }
    }));
    let o = t.register_module(outer).unwrap();
    let sh = t.register_module(shared_bead("shared")).unwrap();
    let mm = t.register_module(main).unwrap();
    let ob = t.instantiate_bead(o).unwrap();
    let sb = t.instantiate_bead(sh).unwrap();
    let mut ss = Vec::new();
    for _ in 0..2 {
        let b = t.instantiate_bead(mm).unwrap();
        let w = t.define_weave(&[b, ob, sb]).unwrap();
        ss.push(t.spawn_string(w, "main").unwrap());
    }
    t.set_quantum(1000).unwrap();
    t.run(None).unwrap();
    let yields: Vec<_> = t
        .trace()
        .lines()
        .iter()
        .filter(|l| l.event.as_str() == "continuation-yield")
        .map(|l| (l.string, l.step))
        .collect();
    // one yield per string: leaving `outer`, not leaving `work`
    assert_eq!(yields.len(), 2);
    assert_eq!(yields[0].1, 6);
}

#[test]
fn same_class_strings_complete_shared_calls_fairly() {
    let mut t = Tapestry::default();
    let c = t.register_module(caller("client", 10_000)).unwrap();
    let s = t.register_module(shared_bead("shared")).unwrap();
    let m = t.instantiate_bead(s).unwrap();
    let mut strings = Vec::new();
    let mut beads = Vec::new();
    for _ in 0..3 {
        let b = t.instantiate_bead(c).unwrap();
        let w = t.define_weave(&[b, m]).unwrap();
        beads.push(b);
        strings.push(t.spawn_string(w, "main").unwrap());
    }
    t.trace_mut().set_enabled(false);
    // stop midway and compare completed-call counts
    t.run(Some(45_000)).unwrap();
    let counts: Vec<f64> = beads
        .iter()
        .map(|b| value::to_u64(t.bead_value(*b, "done").unwrap()).unwrap() as f64)
        .collect();
    let max = counts.iter().cloned().fold(0.0, f64::max);
    let min = counts.iter().cloned().fold(f64::MAX, f64::min);
    assert!(min > 0.0 && (max - min) / max <= 0.05, "{counts:?}");
    assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
}

/// Two independent pairs of solvers around a mediator.
fn fig2() -> (Tapestry, Vec<StringId>, Vec<BeadId>) {
    let mut t = Tapestry::default();
    let solver = t.register_module(caller("solver", 50)).unwrap();
    let mediator = t.register_module(shared_bead("mediator")).unwrap();
    let s: Vec<BeadId> = (0..4).map(|_| t.instantiate_bead(solver).unwrap()).collect();
    let m12 = t.instantiate_bead(mediator).unwrap();
    let m34 = t.instantiate_bead(mediator).unwrap();
    let weaves: Vec<WeaveId> = vec![
        t.define_weave(&[s[0], m12]).unwrap(),
        t.define_weave(&[s[1], m12]).unwrap(),
        t.define_weave(&[s[2], m34]).unwrap(),
        t.define_weave(&[s[3], m34]).unwrap(),
    ];
    let strings = weaves
        .iter()
        .map(|w| t.spawn_string(*w, "main").unwrap())
        .collect();
    (t, strings, vec![m12, m34])
}

#[test]
fn fig2_classes_and_safe_completion() {
    for (policy, seed) in [(Policy::RoundRobinClasses, 0), (Policy::SeededRandom, 7), (Policy::SeededRandom, 99)] {
        for quantum in [1, 2, 3, 64] {
            let (mut t, s, meds) = fig2();
            assert_eq!(s, vec![StringId(0), StringId(1), StringId(2), StringId(3)]);
            assert_eq!(t.equivalence_classes(), vec![vec![s[0], s[1]], vec![s[2], s[3]]]);
            t.set_policy(policy, seed);
            t.set_quantum(quantum).unwrap();
            assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
            for id in &s {
                assert_eq!(t.string(*id).unwrap().status(), Status::Finished);
            }
            for m in meds {
                assert_eq!(value::to_u64(t.bead_value(m, "entries").unwrap()).unwrap(), 100);
            }
        }
    }
}

#[test]
fn seeded_runs_are_deterministic() {
    let run = |seed| {
        let (mut t, _, _) = fig2();
        t.set_policy(Policy::SeededRandom, seed);
        t.set_quantum(2).unwrap();
        t.run(None).unwrap();
        t.trace().lines().iter().map(|l| l.to_string()).collect::<Vec<_>>()
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

// ---- locks ----------------------------------------------------------

/// Entry `main`: acquire `first`, bump its counter by 1, yield, acquire
/// `second`, bump its counter by 10, release both. Counter `cK` is guarded
/// by lock K.
fn locker(first: u32, second: u32) -> ModuleDef {
    ModuleDef::new(format!("locker{first}{second}")).entry(Function::new(
        "main",
        Signature::default(),
        move |ex| {
            let pc = ex.pc();
            ex.advance();
            Ok(match pc {
                0 => Step::Acquire(LockId(first)),
                1 => {
                    let c = format!("c{first}");
                    let v = ex.read_u64(&c)?;
                    ex.write_u64(&c, v + 1)?;
                    Step::Yield
                }
                2 => Step::Acquire(LockId(second)),
                3 => {
                    let c = format!("c{second}");
                    let v = ex.read_u64(&c)?;
                    ex.write_u64(&c, v + 10)?;
                    Step::Continue
                }
                4 => Step::Release(LockId(second)),
                5 => Step::Release(LockId(first)),
                _ => Step::ret(),
            })
        },
    ))
}

fn counters() -> ModuleDef {
    ModuleDef::new("data")
        .global("c1", value::from_u64(0))
        .global("c2", value::from_u64(0))
        .global("c3", value::from_u64(0))
        .export(Function::new("noop", Signature::default(), |_| Ok(Step::ret())))
}

fn read(t: &Tapestry, b: BeadId, sym: &str) -> u64 {
    value::to_u64(t.bead_value(b, sym).unwrap()).unwrap()
}

#[test]
fn two_lock_cycle_is_broken() {
    let mut t = Tapestry::default();
    let data = t
        .register_module(counters())
        .unwrap();
    let ma = t.register_module(locker(1, 2)).unwrap();
    let mb = t.register_module(locker(2, 1)).unwrap();
    let d = t.instantiate_bead(data).unwrap();
    let ba = t.instantiate_bead(ma).unwrap();
    let bb = t.instantiate_bead(mb).unwrap();
    // shared counters `a` and `b` live in the data bead (later bead wins)
    let wa = t.define_weave(&[ba, d]).unwrap();
    let wb = t.define_weave(&[bb, d]).unwrap();
    let a = t.spawn_string(wa, "main").unwrap();
    let b = t.spawn_string(wb, "main").unwrap();
    t.set_quantum(64).unwrap();

    // drive until both are blocked
    t.run(Some(6)).unwrap();
    assert_eq!(t.string(a).unwrap().status(), Status::Blocked);
    assert_eq!(t.string(b).unwrap().status(), Status::Blocked);
    let cycle = t.detect_deadlock().unwrap();
    assert_eq!(cycle, vec![(a, LockId(2)), (b, LockId(1))]);

    assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
    assert_eq!(t.string(a).unwrap().status(), Status::Finished);
    assert_eq!(t.string(b).unwrap().status(), Status::Finished);
    // the victim's first increment was rolled back and redone once
    assert_eq!(read(&t, d, "c1"), 11);
    assert_eq!(read(&t, d, "c2"), 11);
    let events: Vec<_> = t.trace().lines().iter().map(|l| (l.event.as_str(), l.string)).collect();
    assert!(events.contains(&("deadlock", a)));
    assert!(events.contains(&("rollback", a)));
}

#[test]
fn victim_state_matches_pre_acquire_snapshot() {
    let mut t = Tapestry::default();
    let data = t
        .register_module(counters())
        .unwrap();
    let ma = t.register_module(locker(1, 2)).unwrap();
    let mb = t.register_module(locker(2, 1)).unwrap();
    let d = t.instantiate_bead(data).unwrap();
    let ba = t.instantiate_bead(ma).unwrap();
    let bb = t.instantiate_bead(mb).unwrap();
    let wa = t.define_weave(&[ba, d]).unwrap();
    let wb = t.define_weave(&[bb, d]).unwrap();
    let a = t.spawn_string(wa, "main").unwrap();
    let _b = t.spawn_string(wb, "main").unwrap();
    let before: BTreeMap<_, _> = t.memory().cells().iter().map(|(k, c)| (*k, c.value.clone())).collect();
    t.run(Some(6)).unwrap();
    let cycle = t.detect_deadlock().unwrap();
    t.recover(&cycle).unwrap();
    // a's increment of c1 is undone; b's increment of c2 is kept
    assert_eq!(read(&t, d, "c1"), 0);
    assert_eq!(read(&t, d, "c2"), 1);
    let st = t.string(a).unwrap();
    assert_eq!(st.state.frames[0].pc, 1);
    assert_eq!(st.state.pending_lock, Some(LockId(1)));
    assert!(t.held_locks(a).is_empty());
    assert_ne!(before.len(), 0);
}

#[test]
fn release_by_non_holder_fails_the_string() {
    let mut t = Tapestry::default();
    let m = t
        .register_module(ModuleDef::new("bad").entry(Function::new("main", Signature::default(), |_| {
            Ok(Step::Release(LockId(3)))
        })))
        .unwrap();
    let b = t.instantiate_bead(m).unwrap();
    let w = t.define_weave(&[b]).unwrap();
    let s = t.spawn_string(w, "main").unwrap();
    assert_eq!(t.release_lock(s, LockId(3)), Err(Error::NotHolder { string: s, lock: LockId(3) }));
    t.run(None).unwrap();
    assert_eq!(t.string(s).unwrap().status(), Status::Failed);
}

#[test]
fn uncontended_lock_has_one_history_entry() {
    let mut t = Tapestry::default();
    let m = t.register_module(locker(1, 2)).unwrap();
    let data = t.register_module(counters()).unwrap();
    let b = t.instantiate_bead(m).unwrap();
    let d = t.instantiate_bead(data).unwrap();
    let w = t.define_weave(&[b, d]).unwrap();
    let _ = t.spawn_string(w, "main").unwrap();
    t.run(Some(2)).unwrap();
    assert_eq!(t.locks().history().len(), 1);
    t.run(None).unwrap();
    assert_eq!(t.locks().history().len(), 2);
    assert!(t.locks().records().all(|r| r.holder.is_none()));
}

#[test]
fn blocking_inside_a_shared_bead_keeps_the_class_pinned() {
    // s0 enters the shared bead and blocks there on a lock held by s1; s1
    // may not run while s0 is inside, so nothing can make progress.
    let mut t = Tapestry::default();
    let inner = ModuleDef::new("inner").export(Function::new("guarded", Signature::default(), |ex| {
        let pc = ex.pc();
        ex.advance();
        Ok(match pc {
            0 => Step::Acquire(LockId(0)),
            1 => Step::Release(LockId(0)),
            _ => Step::ret(),
        })
    }));
    let outer = ModuleDef::new("outer")
        .entry(Function::new("first", Signature::default(), |ex| {
            let pc = ex.pc();
            ex.advance();
            Ok(match pc {
                0 => Step::Yield,
                1 => Step::call("guarded", &[]),
                _ => Step::ret(),
            })
        }))
        .entry(Function::new("second", Signature::default(), |ex| {
            let pc = ex.pc();
            ex.advance();
            Ok(match pc {
                0 => Step::Acquire(LockId(0)),
                1 => Step::Yield,
                2 => Step::Release(LockId(0)),
                _ => Step::ret(),
            })
        }));
    let i = t.register_module(inner).unwrap();
    let o = t.register_module(outer).unwrap();
    let ib = t.instantiate_bead(i).unwrap();
    let b0 = t.instantiate_bead(o).unwrap();
    let b1 = t.instantiate_bead(o).unwrap();
    let w0 = t.define_weave(&[b0, ib]).unwrap();
    let w1 = t.define_weave(&[b1, ib]).unwrap();
    let s0 = t.spawn_string(w0, "first").unwrap();
    let s1 = t.spawn_string(w1, "second").unwrap();
    assert_eq!(t.run(None), Err(Error::Unrecoverable));
    assert_eq!(t.string(s0).unwrap().status(), Status::Blocked);
    assert_eq!(t.string(s0).unwrap().shared_bead_depth(), 1);
    assert_eq!(t.string(s1).unwrap().status(), Status::Ready);
}

#[test]
fn reacquiring_a_held_lock_fails_the_string() {
    let mut t = Tapestry::default();
    let m = t
        .register_module(ModuleDef::new("twice").entry(Function::new("main", Signature::default(), |ex| {
            ex.advance();
            Ok(Step::Acquire(LockId(0)))
        })))
        .unwrap();
    let b = t.instantiate_bead(m).unwrap();
    let w = t.define_weave(&[b]).unwrap();
    let s = t.spawn_string(w, "main").unwrap();
    assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
    assert_eq!(t.string(s).unwrap().status(), Status::Failed);
    assert!(t.locks().records().all(|r| r.holder.is_none()));
}

#[test]
fn tuple_linked_beads_join_one_class() {
    let mut t = Tapestry::default();
    let m = t.register_module(caller("client", 1)).unwrap();
    let sh = t.register_module(shared_bead("shared")).unwrap();
    let x = t.instantiate_bead(sh).unwrap();
    let y = t.instantiate_bead(sh).unwrap();
    let a = t.instantiate_bead(m).unwrap();
    let b = t.instantiate_bead(m).unwrap();
    let wa = t.define_weave(&[a, x]).unwrap();
    let wb = t.define_weave(&[b, y]).unwrap();
    let sa = t.spawn_string(wa, "main").unwrap();
    let sb = t.spawn_string(wb, "main").unwrap();
    assert_eq!(t.equivalence_classes().len(), 2);
    t.share_tuple(TupleSpaceDecl {
        symbols: vec![weaves_core::SymbolName::new("entries").unwrap()],
        beads: vec![x, y],
    })
    .unwrap();
    assert_eq!(t.equivalence_classes(), vec![vec![sa, sb]]);
    assert!(t.scheduler().is_shared(x) && t.scheduler().is_shared(y));
}
