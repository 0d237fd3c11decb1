//! Function bodies that tapestry config files bind to by name.

use weaves_core::{ChannelId, Error, Exec, Function, Signature, Step};

use crate::apps::delay::delay_body;

type BodyFn = fn(&mut Exec<'_>) -> Result<Step, Error>;

struct Builtin {
    name: &'static str,
    signature: Signature,
    body: BodyFn,
    /// Globals the body reads or writes through its weave.
    uses: &'static [&'static str],
}

const LIBRARY: &[Builtin] = &[
    Builtin {
        name: "noop",
        signature: Signature { params: 0, results: 0 },
        body: noop,
        uses: &[],
    },
    Builtin {
        name: "caller",
        signature: Signature { params: 0, results: 0 },
        body: caller,
        uses: &["calls", "done"],
    },
    Builtin {
        name: "guarded_work",
        signature: Signature { params: 0, results: 0 },
        body: guarded_work,
        uses: &["inside", "entries"],
    },
    Builtin {
        name: "counter",
        signature: Signature { params: 0, results: 0 },
        body: counter,
        uses: &["iters", "count"],
    },
    Builtin {
        name: "delay",
        signature: Signature { params: 0, results: 0 },
        body: delay_body,
        uses: &["remaining", "chunk", "sink"],
    },
    Builtin {
        name: "receive",
        signature: Signature { params: 0, results: 0 },
        body: receive,
        uses: &["channel", "received"],
    },
    Builtin {
        name: "send",
        signature: Signature { params: 0, results: 0 },
        body: send,
        uses: &["channel", "payload"],
    },
];

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    LIBRARY.iter().map(|b| b.name)
}

/// Globals a builtin expects to find in its weave.
pub fn builtin_uses(name: &str) -> Option<&'static [&'static str]> {
    LIBRARY.iter().find(|b| b.name == name).map(|b| b.uses)
}

/// A function named `name` running the builtin `builtin`.
pub fn builtin_function(name: &str, builtin: &str) -> Option<Function> {
    let b = LIBRARY.iter().find(|b| b.name == builtin)?;
    Some(Function::new(name, b.signature, b.body))
}

fn noop(_: &mut Exec<'_>) -> Result<Step, Error> {
    Ok(Step::ret())
}

/// Calls `work` until `done` reaches `calls`.
fn caller(ex: &mut Exec<'_>) -> Result<Step, Error> {
    if ex.pc() == 1 {
        ex.write_u64("done", ex.read_u64("done")? + 1)?;
        ex.set_pc(0);
    }
    if ex.read_u64("done")? >= ex.read_u64("calls")? {
        return Ok(Step::ret());
    }
    ex.set_pc(1);
    Ok(Step::call("work", &[]))
}

/// Three steps inside the bead; fails if the bead is entered twice at once.
fn guarded_work(ex: &mut Exec<'_>) -> Result<Step, Error> {
    match ex.pc() {
        0 => {
            if ex.read_u64("inside")? != 0 {
                return Err(Error::InvalidArgument("re-entered shared bead".into()));
            }
            ex.write_u64("inside", 1)?;
            ex.write_u64("entries", ex.read_u64("entries")? + 1)?;
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
    }
}

/// Increments `count` once per step until it reaches `iters`.
fn counter(ex: &mut Exec<'_>) -> Result<Step, Error> {
    let c = ex.read_u64("count")?;
    if c >= ex.read_u64("iters")? {
        return Ok(Step::ret());
    }
    ex.write_u64("count", c + 1)?;
    Ok(Step::Continue)
}

/// Blocks until a message arrives on `channel`; stores it in `received`.
fn receive(ex: &mut Exec<'_>) -> Result<Step, Error> {
    let ch = ChannelId(ex.read_u64("channel")? as u32);
    match ex.recv(ch) {
        Some(msg) => {
            ex.write("received", msg)?;
            Ok(Step::ret())
        }
        None => Ok(Step::Wait(ch)),
    }
}

/// Sends `payload` on `channel`.
fn send(ex: &mut Exec<'_>) -> Result<Step, Error> {
    let ch = ChannelId(ex.read_u64("channel")? as u32);
    let payload = ex.read("payload")?.to_vec();
    ex.send(ch, payload);
    Ok(Step::ret())
}
