use std::sync::Arc;

use weaves_core::value;
use weaves_core::{
    Error, Function, ModuleDef, RunOutcome, Signature, Step, SymbolName, Tapestry, TupleSpaceDecl,
};

fn noop() -> Function {
    Function::new("main", Signature::default(), |_| Ok(Step::ret()))
}

fn solver() -> ModuleDef {
    ModuleDef::new("solver")
        .global("x", value::from_i64(0))
        .global("tmp", value::from_i64(0))
        .entry(noop())
}

#[test]
fn registration_round_trip_and_uniqueness() {
    let mut t = Tapestry::default();
    let id = t.register_module(solver()).unwrap();
    assert_eq!(t.module_id("solver").unwrap(), id);
    assert_eq!(t.register_module(solver()), Err(Error::DuplicateModule("solver".into())));
    let bad = ModuleDef::new("bad").global("x", vec![]).global("x", vec![]).entry(noop());
    assert!(matches!(t.register_module(bad), Err(Error::InvalidDefinition(_))));
}

#[test]
fn beads_of_one_module_are_separate() {
    let mut t = Tapestry::default();
    let m = t.register_module(solver()).unwrap();
    let a = t.instantiate_bead(m).unwrap();
    let b = t.instantiate_bead(m).unwrap();
    t.write_bead_value(a, "x", value::from_i64(5)).unwrap();
    assert_eq!(value::to_i64(t.bead_value(b, "x").unwrap()).unwrap(), 0);
    // a bead made after the write still starts from the template
    let c = t.instantiate_bead(m).unwrap();
    assert_eq!(value::to_i64(t.bead_value(c, "x").unwrap()).unwrap(), 0);
    let cells = |id| t.bead(id).unwrap().data_context.values().copied().collect::<Vec<_>>();
    let (ca, cb) = (cells(a), cells(b));
    assert!(ca.iter().all(|x| !cb.contains(x)));
    assert!(matches!(
        t.instantiate_bead(weaves_core::ModuleId(9)),
        Err(Error::UnknownModule(_))
    ));
}

#[test]
fn weaves_sharing_a_bead_agree_on_its_cells() {
    let mut t = Tapestry::default();
    let s = t.register_module(solver()).unwrap();
    let m = t
        .register_module(ModuleDef::new("mediator").global("iface", value::from_f64(0.0)).entry(noop()))
        .unwrap();
    let s1 = t.instantiate_bead(s).unwrap();
    let s2 = t.instantiate_bead(s).unwrap();
    let m12 = t.instantiate_bead(m).unwrap();
    let w1 = t.define_weave(&[s1, m12]).unwrap();
    let w2 = t.define_weave(&[s2, m12]).unwrap();
    let t1 = t.context_table(w1).unwrap().clone();
    let t2 = t.context_table(w2).unwrap().clone();
    assert_eq!(t1.resolve("iface"), t2.resolve("iface"));
    assert_ne!(t1.resolve("x"), t2.resolve("x"));
    assert_ne!(t1.resolve("tmp"), t2.resolve("tmp"));
    t.write_symbol(w1, "iface", value::from_f64(0.25)).unwrap();
    assert_eq!(value::to_f64(t.read_symbol(w2, "iface").unwrap()).unwrap(), 0.25);

    assert_eq!(t.define_weave(&[]), Err(Error::EmptyWeave));
    assert!(matches!(t.define_weave(&[weaves_core::BeadId(77)]), Err(Error::UnknownBead(_))));
    let single = t.define_weave(&[s1]).unwrap();
    assert_eq!(t.context_table(single).unwrap().len(), 2);
}

#[test]
fn later_bead_shadows_and_is_reported() {
    let mut t = Tapestry::default();
    let s = t.register_module(solver()).unwrap();
    let a = t.instantiate_bead(s).unwrap();
    let b = t.instantiate_bead(s).unwrap();
    let w = t.define_weave(&[a, b]).unwrap();
    let bx = t.bead(b).unwrap().data_context["x"];
    assert_eq!(t.resolve(w, "x").unwrap(), bx);
    assert!(t.diagnostics().iter().any(|d| d.contains("`x` shadowed")));
}

#[test]
fn tuple_sharing_merges_only_listed_symbols() {
    let mut t = Tapestry::default();
    let s = t.register_module(solver()).unwrap();
    let b1 = t.instantiate_bead(s).unwrap();
    let b2 = t.instantiate_bead(s).unwrap();
    t.write_bead_value(b1, "x", value::from_i64(3)).unwrap();
    let w1 = t.define_weave(&[b1]).unwrap();
    let w2 = t.define_weave(&[b2]).unwrap();
    t.share_tuple(TupleSpaceDecl {
        symbols: vec![SymbolName::new("x").unwrap()],
        beads: vec![b1, b2],
    })
    .unwrap();
    // first-listed bead's value survives
    assert_eq!(value::to_i64(t.read_symbol(w2, "x").unwrap()).unwrap(), 3);
    t.write_symbol(w1, "x", value::from_i64(7)).unwrap();
    assert_eq!(value::to_i64(t.read_symbol(w2, "x").unwrap()).unwrap(), 7);
    assert_ne!(t.resolve(w1, "tmp").unwrap(), t.resolve(w2, "tmp").unwrap());
    let bad = TupleSpaceDecl {
        symbols: vec![SymbolName::new("nope").unwrap()],
        beads: vec![b1, b2],
    };
    assert_eq!(t.share_tuple(bad), Err(Error::UnknownSymbol("nope".into())));

    t.spawn_string(w1, "main").unwrap();
    t.run(None).unwrap();
    let late = TupleSpaceDecl {
        symbols: vec![SymbolName::new("tmp").unwrap()],
        beads: vec![b1, b2],
    };
    assert_eq!(t.share_tuple(late), Err(Error::LateSharing));
}

fn versioned(name: &str, tag: i64) -> ModuleDef {
    ModuleDef::new(name).export(Function::new("solve", Signature::new(0, 1), move |_| {
        Ok(Step::Return(vec![tag as u64]))
    }))
}

fn app() -> ModuleDef {
    ModuleDef::new("app")
        .global("out", value::from_i64(-1))
        .entry(Function::new("main", Signature::default(), |ex| {
            if ex.pc() == 0 {
                ex.advance();
                return Ok(Step::call("solve", &[]));
            }
            let r = ex.returned()[0] as i64;
            ex.write_i64("out", r)?;
            Ok(Step::ret())
        }))
}

#[test]
fn rebinding_is_weave_local() {
    let mut t = Tapestry::default();
    let v1 = t.register_module(versioned("solver_v1", 1)).unwrap();
    let a = t.register_module(app()).unwrap();
    let sv = t.instantiate_bead(v1).unwrap();
    let a1 = t.instantiate_bead(a).unwrap();
    let a2 = t.instantiate_bead(a).unwrap();
    let w1 = t.define_weave(&[a1, sv]).unwrap();
    let w2 = t.define_weave(&[a2, sv]).unwrap();
    let v2 = t.insert_module_runtime(versioned("solver_v2", 2)).unwrap();
    let f2 = t.export_ref("solver_v2", "solve").unwrap();
    let before = t.context_table(w2).unwrap().functions.clone();
    t.rebind_function(w1, "solve", f2).unwrap();
    assert_eq!(t.context_table(w2).unwrap().functions, before);
    t.spawn_string(w1, "main").unwrap();
    t.spawn_string(w2, "main").unwrap();
    assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
    assert_eq!(value::to_i64(t.read_symbol(w1, "out").unwrap()).unwrap(), 2);
    assert_eq!(value::to_i64(t.read_symbol(w2, "out").unwrap()).unwrap(), 1);

    let bad = t
        .register_module(ModuleDef::new("other").export(Function::new("solve", Signature::new(2, 1), |_| Ok(Step::ret()))))
        .unwrap();
    let fb = weaves_core::FuncRef { module: bad, slot: 0 };
    assert_eq!(
        t.rebind_function(w1, "solve", fb),
        Err(Error::SignatureMismatch { name: "solve".into() })
    );
    assert!(matches!(t.rebind_function(w1, "missing", f2), Err(Error::UnknownFunction(_))));
    let _ = v2;
}

#[test]
fn rebinding_takes_effect_at_the_next_call() {
    // the callee is preempted mid-invocation; the rebinding made meanwhile
    // only applies to the following call
    let slow = ModuleDef::new("slow").export(Function::new("solve", Signature::new(0, 1), |ex| {
        if ex.pc() < 3 {
            ex.advance();
            return Ok(Step::Continue);
        }
        Ok(Step::Return(vec![1]))
    }));
    let twice = ModuleDef::new("app")
        .global("first", value::from_i64(0))
        .global("second", value::from_i64(0))
        .entry(Function::new("main", Signature::default(), |ex| match ex.pc() {
            0 => {
                ex.advance();
                Ok(Step::call("solve", &[]))
            }
            1 => {
                let r = ex.returned()[0] as i64;
                ex.write_i64("first", r)?;
                ex.advance();
                Ok(Step::call("solve", &[]))
            }
            _ => {
                let r = ex.returned()[0] as i64;
                ex.write_i64("second", r)?;
                Ok(Step::ret())
            }
        }));
    let mut t = Tapestry::default();
    let s = t.register_module(slow).unwrap();
    let a = t.register_module(twice).unwrap();
    t.register_module(versioned("fast", 2)).unwrap();
    let sb = t.instantiate_bead(s).unwrap();
    let ab = t.instantiate_bead(a).unwrap();
    let w = t.define_weave(&[ab, sb]).unwrap();
    t.spawn_string(w, "main").unwrap();
    t.run(Some(2)).unwrap();
    let f = t.export_ref("fast", "solve").unwrap();
    t.rebind_function(w, "solve", f).unwrap();
    t.run(None).unwrap();
    assert_eq!(value::to_i64(t.read_symbol(w, "first").unwrap()).unwrap(), 1);
    assert_eq!(value::to_i64(t.read_symbol(w, "second").unwrap()).unwrap(), 2);
}

#[test]
fn runtime_insertion_matches_static_composition() {
    let run = |dynamic: bool| {
        let mut t = Tapestry::default();
        let a = t.register_module(app()).unwrap();
        let ab = t.instantiate_bead(a).unwrap();
        let w0 = t.define_weave(&[ab]).unwrap();
        let _ = w0;
        let v = if dynamic {
            let m = ModuleDef::new("spin").entry(noop());
            let spin = t.register_module(m).unwrap();
            let sb = t.instantiate_bead(spin).unwrap();
            let ws = t.define_weave(&[sb]).unwrap();
            t.spawn_string(ws, "main").unwrap();
            t.run(Some(1)).unwrap();
            t.insert_module_runtime(versioned("solver_v2", 2)).unwrap()
        } else {
            t.register_module(versioned("solver_v2", 2)).unwrap()
        };
        let vb = t.instantiate_bead(v).unwrap();
        let ab2 = t.instantiate_bead(a).unwrap();
        let w = t.define_weave(&[ab2, vb]).unwrap();
        t.spawn_string(w, "main").unwrap();
        assert_eq!(t.run(None).unwrap(), RunOutcome::Done);
        value::to_i64(t.read_symbol(w, "out").unwrap()).unwrap()
    };
    assert_eq!(run(true), run(false));
    assert_eq!(run(true), 2);
}

#[test]
fn spawn_validates_weave_and_entry() {
    let mut t = Tapestry::default();
    let s = t.register_module(solver()).unwrap();
    let b = t.instantiate_bead(s).unwrap();
    let w = t.define_weave(&[b]).unwrap();
    assert_eq!(t.spawn_string(w, "bogus"), Err(Error::UnknownEntry("bogus".into())));
    assert!(matches!(t.spawn_string(weaves_core::WeaveId(5), "main"), Err(Error::UnknownWeave(_))));
    let id = t.spawn_string(w, "main").unwrap();
    let task = t.string(id).unwrap();
    assert_eq!(task.spawn_frame.len(), 2);
    assert_eq!(task.shared_bead_depth(), 0);
}

#[test]
fn activation_swaps_tables() {
    let mut t = Tapestry::default();
    let s = t.register_module(solver()).unwrap();
    let a = t.instantiate_bead(s).unwrap();
    let b = t.instantiate_bead(s).unwrap();
    let wa = t.define_weave(&[a]).unwrap();
    let wb = t.define_weave(&[b]).unwrap();
    assert!(t.activate(wa).unwrap().is_none());
    let prev = t.activate(wb).unwrap().unwrap();
    assert!(Arc::ptr_eq(&prev, t.context_table(wa).unwrap()));
    assert_eq!(t.active().resolve("x"), Some(t.resolve(wb, "x").unwrap()));
}
