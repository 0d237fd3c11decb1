use alloc::string::String;

use crate::ids::{Addr, BeadId, ChannelId, CheckpointId, LockId, StringId, WeaveId};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("module `{0}` is already registered")]
    DuplicateModule(String),
    #[error("invalid definition: {0}")]
    InvalidDefinition(String),
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("unknown bead {0}")]
    UnknownBead(BeadId),
    #[error("a weave needs at least one bead")]
    EmptyWeave,
    #[error("unknown weave {0}")]
    UnknownWeave(WeaveId),
    #[error("unknown string {0}")]
    UnknownString(StringId),
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("unknown entry point `{0}`")]
    UnknownEntry(String),
    #[error("signature mismatch binding `{name}`")]
    SignatureMismatch { name: String },
    #[error("tuple sharing must happen before any string runs")]
    LateSharing,
    #[error("every live string is blocked")]
    AllBlocked,
    #[error("deadlock could not be recovered")]
    Unrecoverable,
    #[error("{string} does not hold {lock}")]
    NotHolder { string: StringId, lock: LockId },
    #[error("no acquisition checkpoint for {string} on {lock}")]
    MissingCheckpoint { string: StringId, lock: LockId },
    #[error("double free of {0}")]
    DoubleFree(Addr),
    #[error("no allocation at {0}")]
    UnknownAddress(Addr),
    #[error("access of {len} bytes at offset {offset} is outside the cell at {addr}")]
    OutOfBounds { addr: Addr, offset: u64, len: u64 },
    #[error("allocation size must be positive")]
    ZeroSizedAllocation,
    #[error("checkpoint scope is mid-step")]
    ScopeMidStep,
    #[error("unknown checkpoint {0}")]
    UnknownCheckpoint(CheckpointId),
    #[error("checkpoint {0} refers to destroyed strings")]
    StaleCheckpoint(CheckpointId),
    #[error("no legal action")]
    NoLegalAction,
    #[error("no feasible composition")]
    NoFeasibleComposition,
    #[error("performance database is empty")]
    EmptyDatabase,
    #[error("invalid address split {vm_bits}/{total_bits}")]
    InvalidSplit { total_bits: u32, vm_bits: u32 },
    #[error("unknown channel {0}")]
    UnknownChannel(ChannelId),
    #[error("island is not closed: {from} -> {to}")]
    NotClosed { from: BeadId, to: BeadId },
    #[error("module `{0}` missing at migration target")]
    MissingModule(String),
    #[error("region overflow")]
    RegionOverflow,
    #[error("value type mismatch for `{0}`")]
    TypeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("string {string} faulted: {reason}")]
    Fault { string: StringId, reason: String },
}
