//! Simulated grid: nodes owning disjoint address regions, a reliable
//! transport over a lossy discrete-tick network, partial-consistency
//! checkpoints, and island-of-beads migration.

mod island;
mod partition;
pub mod ranks;
mod sim;
mod transport;

pub use island::{identify_islands, transfer_island, Island, IslandMap};
pub use partition::partition_address_space;
pub use sim::{Grid, GridCheckpoint, GridConfig, GridEvent, GridEventKind, Rank};
pub use transport::{EndpointState, LinkParams, RecvState, SendState, Transport, TransportConfig, TransportStats};
