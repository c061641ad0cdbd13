//! RDMA reliable-connection emulation: registered memory regions, one-sided
//! read/write verbs, a calibrated NIC cost model, and a deterministic
//! virtual clock.

mod emulator;
mod profile;

pub use emulator::{
    Completion, CompletionStatus, ConnectionId, EmuEvent, Emulator, IssueError, Mode, NicCounters,
    NicId, OpId, OpKind, Posting, RegionId, TornDelivery,
};
pub use profile::{NicProfile, ProfileError, ServiceKind};
