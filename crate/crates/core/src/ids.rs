use core::fmt;

macro_rules! dense_id {
    ($(#[$m:meta])* $name:ident, $prefix:literal) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub u32);

        impl $name {
            pub const fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

dense_id!(
    /// Handle of a registered module.
    ModuleId, "m"
);
dense_id!(
    /// Handle of an instantiated bead.
    BeadId, "b"
);
dense_id!(WeaveId, "w");
dense_id!(
    /// Identifier of a string (flow of control).
    StringId, "s"
);
dense_id!(LockId, "l");
dense_id!(CheckpointId, "c");
dense_id!(ClassId, "k");
dense_id!(NodeId, "n");
dense_id!(
    /// A logical communication channel. Channels name endpoints, not
    /// physical nodes.
    ChannelId, "ch"
);

/// Abstract address inside some node's region. Cell handles are addresses:
/// a context-table entry is a pointer to the global it names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Addr(pub u64);

impl Addr {
    pub const fn offset(self, by: u64) -> Addr {
        Addr(self.0 + by)
    }
}

impl fmt::Display for Addr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}
