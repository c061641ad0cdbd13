//! The remote-fetch protocol: bit-exact wire framing plus the client and
//! server state machines. Requests travel by client RDMA-write, results are
//! published by the server into local response rings, and clients pull them
//! back with RDMA-reads — the server side never issues a network operation.

pub mod frame;
pub mod session;

pub use frame::{
    decode_response, encode_request, encode_response, request_frame_len, FrameError, OpCode,
    PollOutcome, PutStatus, RequestFrame, ResponseBody, MAX_BODY, MAX_VALUE, REQUEST_OVERHEAD,
    RESPONSE_HEADER,
};
pub use session::{
    session_setup, ClientSession, FetchOutcome, ProtocolError, ServerSession, SessionConfig,
};
