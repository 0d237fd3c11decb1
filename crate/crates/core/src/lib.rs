//! Runtime core for compositional applications built from modules, beads,
//! weaves and strings.
//!
//! A module is registered code plus declared globals. Each bead is an
//! instance of a module with its own data context. A weave is a namespace
//! assembled from several beads; beads listed in more than one weave have
//! their state shared between them. Strings are resumable flows of control,
//! each bound to one weave for life. The crate is `no_std` and needs only
//! `alloc`.

#![no_std]

extern crate alloc;

pub mod checkpoint;
pub mod error;
pub mod exec;
pub mod grid;
pub mod ids;
pub mod locks;
pub mod memory;
pub mod model;
pub mod namespace;
pub mod recommender;
pub mod sched;
pub mod snapshot;
pub mod tapestry;
pub mod trace;
pub mod value;

pub use checkpoint::{Checkpoint, Mode, Scope};
pub use error::{Error, Result};
pub use exec::{Exec, Mailbox, Step};
pub use ids::{Addr, BeadId, ChannelId, CheckpointId, ClassId, LockId, ModuleId, NodeId, StringId, WeaveId};
pub use memory::{Memory, NodeRegion};
pub use model::{Bead, FuncRef, Function, ModuleDef, Signature, Status, StringTask, SymbolName, Weave};
pub use namespace::{ActiveContext, ContextTable, TupleSpaceDecl};
pub use sched::{Policy, RunOutcome};
pub use snapshot::Snapshot;
pub use tapestry::Tapestry;
