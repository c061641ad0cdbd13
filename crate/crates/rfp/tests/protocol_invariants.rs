//! Protocol-level invariants driven over the emulated transport with real
//! sessions: the round-trip law checked against the transport's own op
//! counter, and the fetch-window accounting at its boundaries.

use rfp::protocol::{
    decode_response, encode_request, encode_response, session_setup, ClientSession, FetchOutcome,
    OpCode, ResponseBody, ServerSession, SessionConfig,
};
use rfp::rdma::{Emulator, Mode, NicProfile, Posting};

fn setup(rfs: usize) -> (Emulator, ClientSession, ServerSession) {
    let mut emu = Emulator::new(Mode::DiscreteEvent, NicProfile::default());
    let client_nic = emu.add_nic();
    let server_nic = emu.add_nic();
    let cfg = SessionConfig { rfs, ..SessionConfig::default() };
    let (c, s) = session_setup(&mut emu, client_nic, server_nic, cfg).unwrap();
    (emu, c, s)
}

/// One GET-hit exchange for a `value_len`-byte stored value, with the
/// server publishing after `delay_polls` of the client's fetches.
/// Returns `(session_round_trips, transport_ops, not_ready_polls)`.
fn get_exchange(rfs: usize, value_len: usize, delay_polls: u32) -> (u32, u64, u32) {
    let (mut emu, mut client, mut server) = setup(rfs);
    let ops_before = emu.conn_ops_issued(client.conn);

    let frame = encode_request(OpCode::Get, &[5; 16], None, 1040).unwrap();
    client.begin_request(frame.len()).unwrap();
    emu.rdma_write(client.conn, client.request_region, 0, &frame, true, Posting::Blocking)
        .unwrap();
    while emu.advance().is_some() {}
    let req = server.consume(&mut emu).unwrap().unwrap();
    assert_eq!(req.kind, OpCode::Get);

    let mut polls = 0;
    let mut published = false;
    loop {
        // Publication withheld for the first `delay_polls` fetches to model
        // a still-busy worker.
        if !published && polls >= delay_polls {
            let body = encode_response(&ResponseBody::GetHit(vec![0xAB; value_len]));
            server.publish(&mut emu, &body).unwrap();
            published = true;
        }
        let (off, len) = client.fetch_plan();
        emu.rdma_read(client.conn, client.ring_region, off, len).unwrap();
        let comp = emu.advance().unwrap();
        match client.on_fetch(&comp.data.unwrap()).unwrap() {
            FetchOutcome::NotReady => polls += 1,
            FetchOutcome::NeedTail { offset, len } => {
                emu.rdma_read(client.conn, client.ring_region, offset, len).unwrap();
                let tail = emu.advance().unwrap();
                match client.on_tail(&tail.data.unwrap()).unwrap() {
                    FetchOutcome::Ready { body, round_trips } => {
                        let got = decode_response(OpCode::Get, &body).unwrap();
                        assert_eq!(got, ResponseBody::GetHit(vec![0xAB; value_len]));
                        return (round_trips, emu.conn_ops_issued(client.conn) - ops_before, polls);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            FetchOutcome::Ready { body, round_trips } => {
                let got = decode_response(OpCode::Get, &body).unwrap();
                assert_eq!(got, ResponseBody::GetHit(vec![0xAB; value_len]));
                return (round_trips, emu.conn_ops_issued(client.conn) - ops_before, polls);
            }
        }
    }
}

/// For a GET hit of value length `v` with a 2-byte value-length field,
/// round trips are `2 + not-ready polls + 1 extra read iff the body
/// (v + 2) exceeds the fetch window (rfs - 2)` — and the session's count
/// always matches the transport's independent op counter.
#[test]
fn round_trip_law_holds_against_the_transport_counter() {
    let rfs = 36;
    for &value_len in &[0usize, 1, 16, 31, 32, 33, 34, 64, 128, 500, 1000] {
        for &delay_polls in &[0u32, 1, 3] {
            let (rt, transport_ops, polls) = get_exchange(rfs, value_len, delay_polls);
            assert_eq!(polls, delay_polls);
            let extra = usize::from(value_len + 2 > rfs - 2) as u32;
            assert_eq!(
                rt,
                2 + polls + extra,
                "law violated for value {value_len} with {polls} polls"
            );
            assert_eq!(
                u64::from(rt),
                transport_ops,
                "session count diverges from the transport counter for value {value_len}"
            );
        }
    }
}

/// A 32-byte value is the largest that completes in one 36-byte fetch;
/// 33 bytes forces the second read.
#[test]
fn fetch_window_boundary_is_exact() {
    let (rt32, ops32, _) = get_exchange(36, 32, 0);
    assert_eq!((rt32, ops32), (2, 2));
    let (rt33, ops33, _) = get_exchange(36, 33, 0);
    assert_eq!((rt33, ops33), (3, 3));
    // Raising the fetch window restores the single-read path.
    let (rt128, ops128, _) = get_exchange(132, 128, 0);
    assert_eq!((rt128, ops128), (2, 2));
    let (rt129, _, _) = get_exchange(132, 129, 0);
    assert_eq!(rt129, 3);
}
