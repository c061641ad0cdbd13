//! The two comparison paradigms run against the same store and transport:
//! server-reply (the server answers with out-bound RDMA-writes) and a
//! simplified totally-bypass model (clients serve GETs by reading an
//! exposed index directly).

pub mod bypass;
pub mod reply;

pub use bypass::{fingerprint, parse_slot, BypassArena, BypassError, BypassIndex, SlotEntry, SLOT_BYTES};
pub use reply::{reply_session_setup, ReplyClientSession, ReplyServerSession};
