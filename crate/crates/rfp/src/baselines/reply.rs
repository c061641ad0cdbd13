//! Server-reply baseline: identical request path, but the server answers by
//! writing the response frame into a client-side reply slot with an
//! out-bound RDMA-write instead of publishing locally. The reply direction
//! is the only difference from the remote-fetch path, which is what makes
//! the two comparable head-to-head.

use crate::protocol::frame::{self, RESPONSE_HEADER};
use crate::protocol::session::{ProtocolError, SessionConfig};
use crate::protocol::{PollOutcome, RequestFrame};
use crate::rdma::{ConnectionId, Emulator, NicId, RegionId};

/// Client endpoint: sends requests, waits for its local reply slot.
#[derive(Debug)]
pub struct ReplyClientSession {
    pub conn: ConnectionId,
    pub request_region: RegionId,
    pub reply_region: RegionId,
    cfg: SessionConfig,
    in_flight: bool,
}

/// Server endpoint: consumes requests, writes replies back remotely.
#[derive(Debug)]
pub struct ReplyServerSession {
    pub conn: ConnectionId,
    pub request_region: RegionId,
    pub reply_region: RegionId,
    cfg: SessionConfig,
}

/// Request region on the server NIC, reply slot on the client NIC, both
/// private to the connection.
pub fn reply_session_setup(
    emu: &mut Emulator,
    client_nic: NicId,
    server_nic: NicId,
    cfg: SessionConfig,
) -> Result<(ReplyClientSession, ReplyServerSession), ProtocolError> {
    cfg.validate()?;
    let conn = emu.connect(client_nic, server_nic);
    let request_region = emu.register_region(server_nic, cfg.request_capacity, &[conn]);
    let reply_region = emu.register_region(client_nic, cfg.slot_capacity, &[conn]);
    Ok((
        ReplyClientSession {
            conn,
            request_region,
            reply_region,
            cfg,
            in_flight: false,
        },
        ReplyServerSession {
            conn,
            request_region,
            reply_region,
            cfg,
        },
    ))
}

impl ReplyClientSession {
    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    pub fn begin_request(&mut self, frame_len: usize) -> Result<(), ProtocolError> {
        if self.in_flight {
            return Err(ProtocolError::InFlightViolation);
        }
        if frame_len > self.cfg.request_capacity {
            return Err(ProtocolError::Frame(frame::FrameError::FrameTooLarge {
                len: frame_len,
                capacity: self.cfg.request_capacity,
            }));
        }
        self.in_flight = true;
        Ok(())
    }

    /// Local poll of the reply slot. On a set done flag, takes the body and
    /// zeroes the slot for the next exchange.
    pub fn try_consume_reply(&mut self, emu: &mut Emulator) -> Option<Vec<u8>> {
        if !self.in_flight {
            return None;
        }
        let slot = emu.region(self.reply_region);
        let (done, body_size) = frame::read_slot_header(slot);
        if !done {
            return None;
        }
        let body = slot[RESPONSE_HEADER..RESPONSE_HEADER + body_size].to_vec();
        emu.region_mut(self.reply_region).fill(0);
        self.in_flight = false;
        Some(body)
    }
}

impl ReplyServerSession {
    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn poll(&self, emu: &Emulator) -> Result<PollOutcome, ProtocolError> {
        Ok(frame::poll_request(emu.region(self.request_region))?)
    }

    pub fn consume(&mut self, emu: &mut Emulator) -> Result<Option<RequestFrame>, ProtocolError> {
        match frame::poll_request(emu.region(self.request_region))? {
            PollOutcome::NotReady => Ok(None),
            PollOutcome::Ready(req) => {
                emu.region_mut(self.request_region).fill(0);
                Ok(Some(req))
            }
        }
    }

    /// The bytes the server writes into the client's reply slot: slot
    /// header with done flag plus the body.
    pub fn encode_reply(&self, body: &[u8]) -> Result<Vec<u8>, ProtocolError> {
        if body.len() > self.cfg.slot_capacity - RESPONSE_HEADER {
            return Err(ProtocolError::ResultTooLarge {
                body: body.len(),
                capacity: self.cfg.slot_capacity - RESPONSE_HEADER,
            });
        }
        let mut reply = vec![0u8; RESPONSE_HEADER + body.len()];
        frame::write_slot_header(&mut reply, true, body.len());
        reply[RESPONSE_HEADER..].copy_from_slice(body);
        Ok(reply)
    }
}
