//! Per-client sessions: the request buffer the client writes into, the
//! response ring the server publishes into, and the fetch state machine the
//! client runs against ring snapshots.
//!
//! Both sides track the current response buffer pointer in lockstep: the
//! client sends at most one request at a time, the server publishes exactly
//! one result per request and advances, and the client advances when it
//! decodes that result. Before a result is published into slot `i`, the
//! header of slot `i + 1` is zeroed so a later request can never fetch a
//! stale done flag from its slot.

use thiserror::Error;

use crate::rdma::{ConnectionId, Emulator, IssueError, NicId, RegionId};

use super::frame::{
    self, FrameError, PollOutcome, RequestFrame, RESPONSE_HEADER,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("a request is already in flight on this session")]
    InFlightViolation,
    #[error("no request in flight")]
    NotInFlight,
    #[error("result body of {body} bytes exceeds slot capacity {capacity}")]
    ResultTooLarge { body: usize, capacity: usize },
    #[error("done flag set with body size {body_size} beyond slot capacity {slot_capacity}")]
    ProtocolCorruption { body_size: usize, slot_capacity: usize },
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Transport(#[from] IssueError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionConfig {
    /// Response buffers per session.
    pub ring_depth: usize,
    /// Bytes per response buffer.
    pub slot_capacity: usize,
    /// Bytes in the request buffer.
    pub request_capacity: usize,
    /// Remote fetching size: how many bytes one fetch read grabs, covering
    /// the slot header and as much of the body as fits.
    pub rfs: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            ring_depth: 8,
            slot_capacity: 1040,
            request_capacity: 1040,
            rfs: 36,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.rfs < RESPONSE_HEADER + 1 {
            return Err(ProtocolError::InvalidConfig(format!(
                "rfs {} below minimum {}",
                self.rfs,
                RESPONSE_HEADER + 1
            )));
        }
        if self.rfs > self.slot_capacity {
            return Err(ProtocolError::InvalidConfig(format!(
                "rfs {} exceeds slot capacity {}",
                self.rfs, self.slot_capacity
            )));
        }
        if self.ring_depth == 0 {
            return Err(ProtocolError::InvalidConfig("ring depth must be >= 1".into()));
        }
        if self.request_capacity < frame::REQUEST_OVERHEAD + 1 {
            return Err(ProtocolError::InvalidConfig(
                "request capacity below minimum frame size".into(),
            ));
        }
        Ok(())
    }
}

/// Server-side view: owns the ring cursor and touches only local memory.
#[derive(Debug)]
pub struct ServerSession {
    pub conn: ConnectionId,
    pub request_region: RegionId,
    pub ring_region: RegionId,
    crbp: usize,
    cfg: SessionConfig,
}

/// Client-side view: mirrors the ring cursor and drives sends and fetches.
#[derive(Debug)]
pub struct ClientSession {
    pub conn: ConnectionId,
    pub request_region: RegionId,
    pub ring_region: RegionId,
    crbp: usize,
    cfg: SessionConfig,
    in_flight: bool,
    round_trips: u32,
    partial: Vec<u8>,
    pending_body: Option<usize>,
}

/// Register the request buffer and response ring for one client on the
/// server NIC, both private to the new connection, and hand back the two
/// lockstep endpoints.
pub fn session_setup(
    emu: &mut Emulator,
    client_nic: NicId,
    server_nic: NicId,
    cfg: SessionConfig,
) -> Result<(ClientSession, ServerSession), ProtocolError> {
    cfg.validate()?;
    let conn = emu.connect(client_nic, server_nic);
    let request_region = emu.register_region(server_nic, cfg.request_capacity, &[conn]);
    let ring_region =
        emu.register_region(server_nic, cfg.ring_depth * cfg.slot_capacity, &[conn]);
    Ok((
        ClientSession {
            conn,
            request_region,
            ring_region,
            crbp: 0,
            cfg,
            in_flight: false,
            round_trips: 0,
            partial: Vec::new(),
            pending_body: None,
        },
        ServerSession {
            conn,
            request_region,
            ring_region,
            crbp: 0,
            cfg,
        },
    ))
}

impl ServerSession {
    pub fn crbp(&self) -> usize {
        self.crbp
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    /// Check the request buffer without consuming it.
    pub fn poll(&self, emu: &Emulator) -> Result<PollOutcome, ProtocolError> {
        Ok(frame::poll_request(emu.region(self.request_region))?)
    }

    /// Poll and, when a complete frame is present, take it and zero the
    /// request buffer. The buffer is clear before any result is published,
    /// so the client may overwrite it as soon as it sees the result.
    pub fn consume(&mut self, emu: &mut Emulator) -> Result<Option<RequestFrame>, ProtocolError> {
        match frame::poll_request(emu.region(self.request_region))? {
            PollOutcome::NotReady => Ok(None),
            PollOutcome::Ready(req) => {
                emu.region_mut(self.request_region).fill(0);
                Ok(Some(req))
            }
        }
    }

    /// Publish a result body into the current slot. Local stores only:
    /// clear the next slot's header, write the body, set the done header,
    /// advance the cursor.
    pub fn publish(&mut self, emu: &mut Emulator, body: &[u8]) -> Result<(), ProtocolError> {
        if body.len() > self.cfg.slot_capacity - RESPONSE_HEADER {
            return Err(ProtocolError::ResultTooLarge {
                body: body.len(),
                capacity: self.cfg.slot_capacity - RESPONSE_HEADER,
            });
        }
        let slot = self.cfg.slot_capacity;
        let next = (self.crbp + 1) % self.cfg.ring_depth;
        let ring = emu.region_mut(self.ring_region);
        ring[next * slot..next * slot + RESPONSE_HEADER].fill(0);
        let base = self.crbp * slot;
        ring[base + RESPONSE_HEADER..base + RESPONSE_HEADER + body.len()].copy_from_slice(body);
        frame::write_slot_header(&mut ring[base..], true, body.len());
        self.crbp = next;
        Ok(())
    }
}

/// What the client should do next after interpreting a fetch snapshot.
#[derive(Debug, PartialEq, Eq)]
pub enum FetchOutcome {
    /// Done flag not set yet; fetch again.
    NotReady,
    /// Body larger than one fetch window: read the remainder.
    NeedTail { offset: usize, len: usize },
    /// Full body assembled; the request is finished.
    Ready { body: Vec<u8>, round_trips: u32 },
}

impl ClientSession {
    pub fn crbp(&self) -> usize {
        self.crbp
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn in_flight(&self) -> bool {
        self.in_flight
    }

    /// Ops issued for the current request so far (send included).
    pub fn round_trips(&self) -> u32 {
        self.round_trips
    }

    /// Start a request: enforces the one-outstanding rule and accounts the
    /// send as the first round trip. The caller then issues the actual
    /// RDMA-write of the frame at offset 0 of `request_region`.
    pub fn begin_request(&mut self, frame_len: usize) -> Result<(), ProtocolError> {
        if self.in_flight {
            return Err(ProtocolError::InFlightViolation);
        }
        if frame_len > self.cfg.request_capacity {
            return Err(ProtocolError::Frame(FrameError::FrameTooLarge {
                len: frame_len,
                capacity: self.cfg.request_capacity,
            }));
        }
        self.in_flight = true;
        self.round_trips = 1;
        self.partial.clear();
        self.pending_body = None;
        Ok(())
    }

    /// Where the next fetch read goes: `(offset, len)` within `ring_region`.
    pub fn fetch_plan(&self) -> (usize, usize) {
        (self.crbp * self.cfg.slot_capacity, self.cfg.rfs)
    }

    /// Interpret one fetch snapshot of `rfs` bytes.
    pub fn on_fetch(&mut self, snapshot: &[u8]) -> Result<FetchOutcome, ProtocolError> {
        if !self.in_flight {
            return Err(ProtocolError::NotInFlight);
        }
        self.round_trips += 1;
        let (done, body_size) = frame::read_slot_header(snapshot);
        if !done {
            return Ok(FetchOutcome::NotReady);
        }
        if body_size > self.cfg.slot_capacity - RESPONSE_HEADER {
            return Err(ProtocolError::ProtocolCorruption {
                body_size,
                slot_capacity: self.cfg.slot_capacity,
            });
        }
        if body_size <= self.cfg.rfs - RESPONSE_HEADER {
            let body = snapshot[RESPONSE_HEADER..RESPONSE_HEADER + body_size].to_vec();
            return Ok(self.finish(body));
        }
        self.partial = snapshot[RESPONSE_HEADER..].to_vec();
        self.pending_body = Some(body_size);
        Ok(FetchOutcome::NeedTail {
            offset: self.crbp * self.cfg.slot_capacity + self.cfg.rfs,
            len: body_size - (self.cfg.rfs - RESPONSE_HEADER),
        })
    }

    /// Complete a two-read fetch with the remainder of the body.
    pub fn on_tail(&mut self, data: &[u8]) -> Result<FetchOutcome, ProtocolError> {
        let body_size = self.pending_body.take().ok_or(ProtocolError::NotInFlight)?;
        self.round_trips += 1;
        let mut body = std::mem::take(&mut self.partial);
        body.extend_from_slice(data);
        debug_assert_eq!(body.len(), body_size);
        Ok(self.finish(body))
    }

    fn finish(&mut self, body: Vec<u8>) -> FetchOutcome {
        self.crbp = (self.crbp + 1) % self.cfg.ring_depth;
        self.in_flight = false;
        FetchOutcome::Ready {
            body,
            round_trips: self.round_trips,
        }
    }
}
