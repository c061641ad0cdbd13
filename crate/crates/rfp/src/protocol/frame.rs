//! Wire layouts for request and response buffers.
//!
//! These byte layouts are the protocol's contract with the emulated
//! transport and must stay bit-exact; `docs/wire-format.md` is the
//! normative description.
//!
//! Request buffer:
//!
//! ```text
//! offset 0   u16 LE header: bit 15 = arrival flag, bits 0..14 = body length
//! offset 2   body: opcode u8 (0 = GET, 1 = PUT)
//!                  key_len u16 LE, key bytes
//!                  (PUT only) val_len u16 LE, value bytes
//! offset 2+body_len   u8 tail, 1 when the frame is complete
//! ```
//!
//! A frame is consumable only when the arrival flag and the tail are both 1;
//! either one alone proves nothing about the bytes in between.
//!
//! Response slot:
//!
//! ```text
//! offset 0   u16 LE header: bit 15 = done flag, bits 0..14 = body size
//! offset 2   body
//! ```
//!
//! The GET-hit body is `val_len u16 LE + value` — no status byte, a hit is
//! implied by the done flag, so a value of `n` bytes occupies exactly `n + 2`
//! body bytes and a fetch of `n + 4` bytes carries header and result in one
//! read. GET misses and errors use the reserved `val_len` markers below.
//! The PUT body is a single status byte.

use thiserror::Error;

/// Request framing overhead: 2-byte header plus 1-byte tail.
pub const REQUEST_OVERHEAD: usize = 3;
/// Response slot header size.
pub const RESPONSE_HEADER: usize = 2;
/// Largest encodable body (15-bit length fields).
pub const MAX_BODY: usize = 0x7FFF;
/// Largest value a response can carry: body minus the val_len field,
/// keeping clear of the reserved markers.
pub const MAX_VALUE: usize = MAX_BODY - REQUEST_OVERHEAD;

const FLAG_BIT: u16 = 1 << 15;
const TAIL_SET: u8 = 1;

/// `val_len` marker for a GET on an absent key.
pub const VAL_LEN_MISS: u16 = 0xFFFF;
/// `val_len` marker for a GET the store failed to serve.
pub const VAL_LEN_ERROR: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpCode {
    Get = 0,
    Put = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestFrame {
    pub kind: OpCode,
    pub key: Vec<u8>,
    pub value: Option<Vec<u8>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutStatus {
    Ok = 0,
    NotFound = 1,
    Error = 2,
}

/// Decoded response body; which variants are possible depends on the
/// request the client knows it sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseBody {
    GetHit(Vec<u8>),
    GetMiss,
    GetError,
    PutAck(PutStatus),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame of {len} bytes exceeds buffer capacity {capacity}")]
    FrameTooLarge { len: usize, capacity: usize },
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
}

/// Encoded size of a request frame before building it.
pub fn request_frame_len(kind: OpCode, key_len: usize, value_len: usize) -> usize {
    let body = match kind {
        OpCode::Get => 1 + 2 + key_len,
        OpCode::Put => 1 + 2 + key_len + 2 + value_len,
    };
    REQUEST_OVERHEAD + body
}

/// Build the full request frame with arrival flag and tail already set.
pub fn encode_request(
    kind: OpCode,
    key: &[u8],
    value: Option<&[u8]>,
    capacity: usize,
) -> Result<Vec<u8>, FrameError> {
    let value_len = value.map_or(0, <[u8]>::len);
    let total = request_frame_len(kind, key.len(), value_len);
    let body_len = total - REQUEST_OVERHEAD;
    if total > capacity || body_len > MAX_BODY {
        return Err(FrameError::FrameTooLarge {
            len: total,
            capacity: capacity.min(MAX_BODY + REQUEST_OVERHEAD),
        });
    }
    debug_assert!(key.len() <= u16::MAX as usize);
    let mut frame = Vec::with_capacity(total);
    frame.extend_from_slice(&(FLAG_BIT | body_len as u16).to_le_bytes());
    frame.push(kind as u8);
    frame.extend_from_slice(&(key.len() as u16).to_le_bytes());
    frame.extend_from_slice(key);
    if kind == OpCode::Put {
        let value = value.unwrap_or(&[]);
        frame.extend_from_slice(&(value.len() as u16).to_le_bytes());
        frame.extend_from_slice(value);
    }
    frame.push(TAIL_SET);
    frame
        .len()
        .eq(&total)
        .then_some(frame)
        .ok_or(FrameError::Malformed("length bookkeeping"))
}

#[derive(Debug, PartialEq, Eq)]
pub enum PollOutcome {
    NotReady,
    Ready(RequestFrame),
}

/// Inspect a request buffer. Returns a frame only when both the arrival
/// flag and the tail byte are set; a buffer mid-delivery reads as
/// `NotReady`. Flags that are set around an impossible body length are a
/// protocol violation, not an incomplete delivery.
pub fn poll_request(buf: &[u8]) -> Result<PollOutcome, FrameError> {
    if buf.len() < REQUEST_OVERHEAD {
        return Err(FrameError::Malformed("buffer below minimum frame size"));
    }
    let header = u16::from_le_bytes([buf[0], buf[1]]);
    if header & FLAG_BIT == 0 {
        return Ok(PollOutcome::NotReady);
    }
    let body_len = (header & !FLAG_BIT) as usize;
    if REQUEST_OVERHEAD + body_len > buf.len() {
        return Err(FrameError::Malformed(
            "body length inconsistent with buffer capacity",
        ));
    }
    if buf[2 + body_len] != TAIL_SET {
        return Ok(PollOutcome::NotReady);
    }
    let body = &buf[2..2 + body_len];
    decode_body(body).map(PollOutcome::Ready)
}

fn decode_body(body: &[u8]) -> Result<RequestFrame, FrameError> {
    if body.is_empty() {
        return Err(FrameError::Malformed("empty body"));
    }
    let kind = match body[0] {
        0 => OpCode::Get,
        1 => OpCode::Put,
        _ => return Err(FrameError::Malformed("unknown opcode")),
    };
    if body.len() < 3 {
        return Err(FrameError::Malformed("body truncated before key length"));
    }
    let key_len = u16::from_le_bytes([body[1], body[2]]) as usize;
    let key_end = 3 + key_len;
    if key_end > body.len() {
        return Err(FrameError::Malformed("key extends past body"));
    }
    let key = body[3..key_end].to_vec();
    match kind {
        OpCode::Get => {
            if key_end != body.len() {
                return Err(FrameError::Malformed("trailing bytes after GET key"));
            }
            Ok(RequestFrame { kind, key, value: None })
        }
        OpCode::Put => {
            if key_end + 2 > body.len() {
                return Err(FrameError::Malformed("body truncated before value length"));
            }
            let val_len = u16::from_le_bytes([body[key_end], body[key_end + 1]]) as usize;
            let val_end = key_end + 2 + val_len;
            if val_end != body.len() {
                return Err(FrameError::Malformed("value length inconsistent with body"));
            }
            Ok(RequestFrame {
                kind,
                key,
                value: Some(body[key_end + 2..val_end].to_vec()),
            })
        }
    }
}

pub fn encode_response(body: &ResponseBody) -> Vec<u8> {
    match body {
        ResponseBody::GetHit(value) => {
            debug_assert!(value.len() <= MAX_VALUE);
            let mut out = Vec::with_capacity(2 + value.len());
            out.extend_from_slice(&(value.len() as u16).to_le_bytes());
            out.extend_from_slice(value);
            out
        }
        ResponseBody::GetMiss => VAL_LEN_MISS.to_le_bytes().to_vec(),
        ResponseBody::GetError => VAL_LEN_ERROR.to_le_bytes().to_vec(),
        ResponseBody::PutAck(status) => vec![*status as u8],
    }
}

/// Decode a response body; the caller supplies the opcode of the request it
/// is an answer to.
pub fn decode_response(kind: OpCode, body: &[u8]) -> Result<ResponseBody, FrameError> {
    match kind {
        OpCode::Get => {
            if body.len() < 2 {
                return Err(FrameError::Malformed("GET response below val_len"));
            }
            match u16::from_le_bytes([body[0], body[1]]) {
                VAL_LEN_MISS if body.len() == 2 => Ok(ResponseBody::GetMiss),
                VAL_LEN_ERROR if body.len() == 2 => Ok(ResponseBody::GetError),
                val_len if 2 + val_len as usize == body.len() => {
                    Ok(ResponseBody::GetHit(body[2..].to_vec()))
                }
                _ => Err(FrameError::Malformed("val_len inconsistent with body size")),
            }
        }
        OpCode::Put => match body {
            [0] => Ok(ResponseBody::PutAck(PutStatus::Ok)),
            [1] => Ok(ResponseBody::PutAck(PutStatus::NotFound)),
            [2] => Ok(ResponseBody::PutAck(PutStatus::Error)),
            _ => Err(FrameError::Malformed("bad PUT acknowledgment")),
        },
    }
}

/// Write a response-slot header in place.
pub fn write_slot_header(slot: &mut [u8], done: bool, body_size: usize) {
    debug_assert!(body_size <= MAX_BODY);
    let header = if done {
        FLAG_BIT | body_size as u16
    } else {
        body_size as u16
    };
    slot[..2].copy_from_slice(&header.to_le_bytes());
}

/// `(done, body_size)` from the first two bytes of a slot.
pub fn read_slot_header(slot: &[u8]) -> (bool, usize) {
    let header = u16::from_le_bytes([slot[0], slot[1]]);
    (header & FLAG_BIT != 0, (header & !FLAG_BIT) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn get_frame_layout() {
        let frame = encode_request(OpCode::Get, &[0xAB; 16], None, 1040).unwrap();
        // 2 header + (1 opcode + 2 key_len + 16 key) + 1 tail.
        assert_eq!(frame.len(), 22);
        assert_eq!(u16::from_le_bytes([frame[0], frame[1]]), 0x8000 | 19);
        assert_eq!(frame[2], 0);
        assert_eq!(u16::from_le_bytes([frame[3], frame[4]]), 16);
        assert_eq!(*frame.last().unwrap(), 1);
    }

    #[test]
    fn put_frame_layout() {
        let frame = encode_request(OpCode::Put, &[1; 16], Some(&[2; 32]), 1040).unwrap();
        assert_eq!(frame.len(), 56);
        assert_eq!(u16::from_le_bytes([frame[0], frame[1]]), 0x8000 | 53);
    }

    #[test]
    fn empty_key_is_accepted_by_the_codec() {
        let frame = encode_request(OpCode::Get, &[], None, 64).unwrap();
        assert_eq!(frame.len(), 6);
        assert_eq!(u16::from_le_bytes([frame[0], frame[1]]) & 0x7FFF, 3);
    }

    #[test]
    fn oversize_frame_is_rejected() {
        let err = encode_request(OpCode::Put, &[0; 16], Some(&[0; 1024]), 1040).unwrap_err();
        assert_eq!(err, FrameError::FrameTooLarge { len: 1048, capacity: 1040 });
    }

    #[test]
    fn zeroed_buffer_is_not_ready() {
        assert_eq!(poll_request(&[0u8; 64]).unwrap(), PollOutcome::NotReady);
    }

    #[test]
    fn arrival_flag_without_tail_is_not_ready() {
        let frame = encode_request(OpCode::Put, &[1; 16], Some(&[2; 32]), 1040).unwrap();
        let mut buf = vec![0u8; 64];
        // Header and body land, tail still missing.
        buf[..frame.len() - 1].copy_from_slice(&frame[..frame.len() - 1]);
        assert_eq!(poll_request(&buf).unwrap(), PollOutcome::NotReady);
    }

    #[test]
    fn tail_without_arrival_flag_is_not_ready() {
        let frame = encode_request(OpCode::Get, &[1; 16], None, 1040).unwrap();
        let mut buf = vec![0u8; 64];
        buf[2..frame.len()].copy_from_slice(&frame[2..]);
        assert_eq!(poll_request(&buf).unwrap(), PollOutcome::NotReady);
    }

    #[test]
    fn complete_frame_round_trips() {
        let frame = encode_request(OpCode::Put, &[9; 16], Some(&[7; 32]), 1040).unwrap();
        let mut buf = vec![0u8; 1040];
        buf[..frame.len()].copy_from_slice(&frame);
        match poll_request(&buf).unwrap() {
            PollOutcome::Ready(req) => {
                assert_eq!(req.kind, OpCode::Put);
                assert_eq!(req.key, vec![9; 16]);
                assert_eq!(req.value, Some(vec![7; 32]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_body_length_is_malformed() {
        let mut buf = vec![0u8; 16];
        // Arrival flag set with a body length pointing past the buffer.
        buf[..2].copy_from_slice(&(0x8000u16 | 500).to_le_bytes());
        assert!(matches!(poll_request(&buf), Err(FrameError::Malformed(_))));
    }

    #[test]
    fn get_hit_accounting_matches_the_fetch_window() {
        // A 32-byte value plus the 2-byte val_len is exactly rfs - 2 for
        // rfs = 36: header + body fit in one fetch.
        let body = encode_response(&ResponseBody::GetHit(vec![0; 32]));
        assert_eq!(body.len(), 34);
    }

    #[test]
    fn miss_and_error_markers_round_trip() {
        for body in [ResponseBody::GetMiss, ResponseBody::GetError] {
            let bytes = encode_response(&body);
            assert_eq!(bytes.len(), 2);
            assert_eq!(decode_response(OpCode::Get, &bytes).unwrap(), body);
        }
        let ack = encode_response(&ResponseBody::PutAck(PutStatus::Ok));
        assert_eq!(ack, vec![0]);
        assert_eq!(
            decode_response(OpCode::Put, &ack).unwrap(),
            ResponseBody::PutAck(PutStatus::Ok)
        );
    }

    #[test]
    fn slot_header_round_trips() {
        let mut slot = vec![0u8; 8];
        write_slot_header(&mut slot, true, 37);
        assert_eq!(read_slot_header(&slot), (true, 37));
        write_slot_header(&mut slot, false, 0);
        assert_eq!(read_slot_header(&slot), (false, 0));
    }

    proptest! {
        #[test]
        fn request_encode_decode_round_trips(
            is_put in prop::bool::ANY,
            key in prop::collection::vec(prop::num::u8::ANY, 0..64),
            value in prop::collection::vec(prop::num::u8::ANY, 0..256),
        ) {
            let kind = if is_put { OpCode::Put } else { OpCode::Get };
            let value = is_put.then_some(value);
            let frame = encode_request(kind, &key, value.as_deref(), 2048).unwrap();
            let mut buf = vec![0u8; 2048];
            buf[..frame.len()].copy_from_slice(&frame);
            let got = match poll_request(&buf).unwrap() {
                PollOutcome::Ready(req) => req,
                other => return Err(TestCaseError::fail(format!("{other:?}"))),
            };
            prop_assert_eq!(got, RequestFrame { kind, key, value });
        }

        #[test]
        fn get_response_round_trips(value in prop::collection::vec(prop::num::u8::ANY, 0..512)) {
            let body = encode_response(&ResponseBody::GetHit(value.clone()));
            prop_assert_eq!(
                decode_response(OpCode::Get, &body).unwrap(),
                ResponseBody::GetHit(value)
            );
        }
    }
}
