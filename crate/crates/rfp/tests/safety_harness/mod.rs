//! Single-client protocol harness for the safety criteria: drives the real
//! session state machines over the emulated transport, one request at a
//! time, with zero-cost workers serviced at delivery events. No performance
//! model is exercised here — only protocol behavior.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfp::baselines::bypass::{self, BypassArena, BypassIndex};
use rfp::baselines::reply::{reply_session_setup, ReplyClientSession, ReplyServerSession};
use rfp::protocol::{
    decode_response, encode_request, encode_response, session_setup, ClientSession, FetchOutcome,
    OpCode, PutStatus, RequestFrame, ResponseBody, ServerSession, SessionConfig,
};
use rfp::rdma::{EmuEvent, Emulator, Mode, NicProfile, Posting, TornDelivery};
use rfp::store::{partition_for_key, Partition};

/// Outcome of one client operation, comparable across paradigms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpResult {
    Hit(Vec<u8>),
    Miss,
    PutOk,
}

fn exec_store(partitions: &mut [Partition], req: &RequestFrame) -> ResponseBody {
    let w = partition_for_key(&req.key, partitions.len());
    match req.kind {
        OpCode::Get => match partitions[w].get(w, &req.key) {
            Some(v) => ResponseBody::GetHit(v.to_vec()),
            None => ResponseBody::GetMiss,
        },
        OpCode::Put => {
            partitions[w]
                .put(w, &req.key, req.value.clone().unwrap_or_default())
                .expect("store put failed");
            ResponseBody::PutAck(PutStatus::Ok)
        }
    }
}

fn to_result(kind: OpCode, body: &[u8]) -> OpResult {
    match decode_response(kind, body).expect("undecodable response") {
        ResponseBody::GetHit(v) => OpResult::Hit(v),
        ResponseBody::GetMiss => OpResult::Miss,
        ResponseBody::PutAck(PutStatus::Ok) => OpResult::PutOk,
        other => panic!("unexpected response {other:?}"),
    }
}

// ---- remote-fetch cluster --------------------------------------------------

pub struct RfpCluster {
    emu: Emulator,
    partitions: Vec<Partition>,
    clients: Vec<ClientSession>,
    servers: Vec<ServerSession>,
}

impl RfpCluster {
    pub fn new(workers: usize, cfg: SessionConfig) -> Self {
        let mut emu = Emulator::new(Mode::DiscreteEvent, NicProfile::default());
        let client_nic = emu.add_nic();
        let server_nic = emu.add_nic();
        let mut clients = Vec::new();
        let mut servers = Vec::new();
        for _ in 0..workers {
            let (c, s) = session_setup(&mut emu, client_nic, server_nic, cfg).unwrap();
            clients.push(c);
            servers.push(s);
        }
        RfpCluster {
            emu,
            partitions: (0..workers).map(|w| Partition::new(w, None)).collect(),
            clients,
            servers,
        }
    }

    /// Drain the event queue; at each delivery, poll every session like an
    /// always-running worker would.
    fn drain(&mut self) -> Vec<rfp::rdma::Completion> {
        let mut completions = Vec::new();
        while let Some(ev) = self.emu.advance_raw() {
            match ev {
                EmuEvent::Delivered { .. } => {
                    for w in 0..self.servers.len() {
                        if let Some(req) = self.servers[w].consume(&mut self.emu).unwrap() {
                            let body = exec_store(&mut self.partitions, &req);
                            self.servers[w]
                                .publish(&mut self.emu, &encode_response(&body))
                                .unwrap();
                        }
                    }
                }
                EmuEvent::Completed(c) => completions.push(c),
                EmuEvent::Timer { .. } => {}
            }
        }
        completions
    }

    pub fn execute(&mut self, kind: OpCode, key: &[u8], value: Option<&[u8]>) -> OpResult {
        let w = partition_for_key(key, self.servers.len());
        let frame = encode_request(kind, key, value, self.clients[w].config().request_capacity)
            .expect("encode failed");
        self.clients[w].begin_request(frame.len()).unwrap();
        let inline = frame.len() <= self.emu.profile().inline_threshold;
        let conn = self.clients[w].conn;
        let region = self.clients[w].request_region;
        self.emu
            .rdma_write(conn, region, 0, &frame, inline, Posting::Blocking)
            .unwrap();
        self.drain();
        loop {
            let (off, len) = self.clients[w].fetch_plan();
            let ring = self.clients[w].ring_region;
            self.emu.rdma_read(conn, ring, off, len).unwrap();
            let comp = self.drain().pop().expect("fetch completion");
            match self.clients[w].on_fetch(&comp.data.unwrap()).unwrap() {
                FetchOutcome::NotReady => continue,
                FetchOutcome::NeedTail { offset, len } => {
                    self.emu.rdma_read(conn, ring, offset, len).unwrap();
                    let tail = self.drain().pop().expect("tail completion");
                    match self.clients[w].on_tail(&tail.data.unwrap()).unwrap() {
                        FetchOutcome::Ready { body, .. } => return to_result(kind, &body),
                        other => panic!("unexpected {other:?}"),
                    }
                }
                FetchOutcome::Ready { body, .. } => return to_result(kind, &body),
            }
        }
    }

    pub fn lockstep(&self, worker: usize) -> (usize, usize) {
        (self.clients[worker].crbp(), self.servers[worker].crbp())
    }
}

// ---- server-reply cluster ---------------------------------------------------

pub struct SrCluster {
    emu: Emulator,
    partitions: Vec<Partition>,
    clients: Vec<ReplyClientSession>,
    servers: Vec<ReplyServerSession>,
    index: Option<(BypassIndex, Vec<BypassArena>)>,
}

impl SrCluster {
    pub fn new(workers: usize, cfg: SessionConfig, bypass_keys: Option<u64>) -> Self {
        let mut emu = Emulator::new(Mode::DiscreteEvent, NicProfile::default());
        let client_nic = emu.add_nic();
        let server_nic = emu.add_nic();
        let mut clients = Vec::new();
        let mut servers = Vec::new();
        for _ in 0..workers {
            let (c, s) = reply_session_setup(&mut emu, client_nic, server_nic, cfg).unwrap();
            clients.push(c);
            servers.push(s);
        }
        let index = bypass_keys.map(|keys| {
            let conns: Vec<_> = clients.iter().map(|c| c.conn).collect();
            let index = BypassIndex::create(
                &mut emu,
                server_nic,
                &conns,
                keys,
                workers,
                16,
                cfg.slot_capacity,
            );
            let arenas = (0..workers).map(|w| index.new_arena(w)).collect();
            (index, arenas)
        });
        SrCluster {
            emu,
            partitions: (0..workers).map(|w| Partition::new(w, None)).collect(),
            clients,
            servers,
            index,
        }
    }

    fn drain(&mut self) -> Vec<rfp::rdma::Completion> {
        let mut completions = Vec::new();
        while let Some(ev) = self.emu.advance_raw() {
            match ev {
                EmuEvent::Delivered { .. } => {
                    for w in 0..self.servers.len() {
                        if let Some(req) = self.servers[w].consume(&mut self.emu).unwrap() {
                            if req.kind == OpCode::Put {
                                if let Some((index, arenas)) = &mut self.index {
                                    index
                                        .upsert(
                                            &mut self.emu,
                                            w,
                                            &mut arenas[w],
                                            &req.key,
                                            req.value.as_deref().unwrap_or(&[]),
                                        )
                                        .unwrap();
                                }
                            }
                            let body = exec_store(&mut self.partitions, &req);
                            let reply =
                                self.servers[w].encode_reply(&encode_response(&body)).unwrap();
                            let conn = self.servers[w].conn;
                            let region = self.servers[w].reply_region;
                            let inline = reply.len() <= self.emu.profile().inline_threshold;
                            self.emu
                                .rdma_write(conn, region, 0, &reply, inline, Posting::Posted)
                                .unwrap();
                        }
                    }
                }
                EmuEvent::Completed(c) => completions.push(c),
                EmuEvent::Timer { .. } => {}
            }
        }
        completions
    }

    /// Request through the server-reply path.
    pub fn execute_sr(&mut self, kind: OpCode, key: &[u8], value: Option<&[u8]>) -> OpResult {
        let w = partition_for_key(key, self.servers.len());
        let frame = encode_request(kind, key, value, self.clients[w].config().request_capacity)
            .expect("encode failed");
        self.clients[w].begin_request(frame.len()).unwrap();
        let conn = self.clients[w].conn;
        let region = self.clients[w].request_region;
        let inline = frame.len() <= self.emu.profile().inline_threshold;
        self.emu
            .rdma_write(conn, region, 0, &frame, inline, Posting::Blocking)
            .unwrap();
        self.drain();
        let body = self.clients[w]
            .try_consume_reply(&mut self.emu)
            .expect("reply not present after drain");
        to_result(kind, &body)
    }

    /// GET through the exposed index (the bypass read path).
    pub fn execute_bypass_get(&mut self, key: &[u8]) -> OpResult {
        let (index_region, heap_region, chain) = {
            let (index, _) = self.index.as_ref().expect("bypass cluster without index");
            (index.index_region, index.heap_region, index.bucket_chain(key))
        };
        let w = partition_for_key(key, self.servers.len());
        let conn = self.clients[w].conn;
        let fp = bypass::fingerprint(key);
        'retry: loop {
            for &bucket in &chain {
                let off = { self.index.as_ref().unwrap().0.slot_byte_offset(bucket) };
                self.emu
                    .rdma_read(conn, index_region, off, bypass::SLOT_BYTES)
                    .unwrap();
                let slot = self.drain().pop().expect("slot completion");
                let entry = bypass::parse_slot(&slot.data.unwrap());
                if entry.fingerprint == 0 {
                    return OpResult::Miss;
                }
                if entry.fingerprint == fp {
                    let (off, len) = { self.index.as_ref().unwrap().0.value_read_plan(&entry) };
                    self.emu.rdma_read(conn, heap_region, off, len).unwrap();
                    let cell = self.drain().pop().expect("cell completion");
                    match BypassIndex::check_value(&entry, &cell.data.unwrap()) {
                        Ok(value) => return OpResult::Hit(value),
                        Err(_) => continue 'retry,
                    }
                }
            }
            return OpResult::Miss;
        }
    }
}

// ---- criterion drivers -------------------------------------------------------

/// Criterion 7a: inject torn delivery at every split offset of a 56-byte
/// PUT frame; returns the number of premature consumptions or corrupted
/// decodes (must be zero).
pub fn torn_delivery_sweep() -> usize {
    let key = [7u8; 16];
    let value = [9u8; 32];
    let mut violations = 0;
    let frame_len = rfp::protocol::request_frame_len(OpCode::Put, key.len(), value.len());
    assert_eq!(frame_len, 56);
    for split in 1..frame_len {
        let mut emu = Emulator::new(Mode::DiscreteEvent, NicProfile::default());
        let client_nic = emu.add_nic();
        let server_nic = emu.add_nic();
        let (mut client, mut server) =
            session_setup(&mut emu, client_nic, server_nic, SessionConfig::default()).unwrap();
        let frame = encode_request(OpCode::Put, &key, Some(&value), 1040).unwrap();
        client.begin_request(frame.len()).unwrap();
        emu.set_torn_delivery(Some(TornDelivery { split, gap_ns: 40 }));
        emu.rdma_write(client.conn, client.request_region, 0, &frame, true, Posting::Blocking)
            .unwrap();
        let mut deliveries = 0;
        let mut consumed = false;
        while let Some(ev) = emu.advance_raw() {
            if matches!(ev, EmuEvent::Delivered { .. }) {
                deliveries += 1;
                match server.consume(&mut emu) {
                    Ok(None) => {
                        if deliveries >= 2 {
                            violations += 1; // complete frame not recognized
                        }
                    }
                    Ok(Some(req)) => {
                        consumed = true;
                        if deliveries < 2 {
                            violations += 1; // premature consumption
                        }
                        if req.key != key || req.value.as_deref() != Some(&value[..]) {
                            violations += 1; // corrupted decode
                        }
                    }
                    Err(_) => violations += 1,
                }
            }
        }
        if !consumed {
            violations += 1;
        }
    }
    violations
}

/// Criterion 7b: `streaks * ring_depth` PUT+GET pairs on one session; every
/// GET must return its own PUT's value and the cursors must stay in
/// lockstep. Returns the number of exchanges performed.
pub fn freshness_streak(ring_depth: usize, streaks: usize) -> usize {
    let cfg = SessionConfig { ring_depth, ..SessionConfig::default() };
    let mut cluster = RfpCluster::new(1, cfg);
    let key = b"streak-key";
    let rounds = streaks * ring_depth;
    let mut exchanges = 0;
    for i in 0..rounds {
        let value = format!("value-{i:08}").into_bytes();
        assert_eq!(
            cluster.execute(OpCode::Put, key, Some(&value)),
            OpResult::PutOk
        );
        let got = cluster.execute(OpCode::Get, key, None);
        assert_eq!(
            got,
            OpResult::Hit(value),
            "stale or wrong result at exchange {i}"
        );
        let (c, s) = cluster.lockstep(partition_for_key(key, 1));
        assert_eq!(c, s, "cursor lockstep broken at exchange {i}");
        exchanges += 2;
    }
    exchanges
}

/// Criterion 7c: a seeded random single-client history gives identical
/// per-operation results under all three paradigms and a map model.
pub fn histories_agree(seed: u64, ops: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let workers = 3;
    let cfg = SessionConfig::default();
    let mut rfp = RfpCluster::new(workers, cfg);
    let mut sr = SrCluster::new(workers, cfg, None);
    let mut bypass = SrCluster::new(workers, cfg, Some(64));
    let mut model: BTreeMap<Vec<u8>, Vec<u8>> = BTreeMap::new();

    for i in 0..ops {
        let key = vec![rng.random_range(b'a'..=b'p'), rng.random_range(b'a'..=b'd')];
        let is_get = rng.random::<f64>() < 0.5;
        if is_get {
            let expected = match model.get(&key) {
                Some(v) => OpResult::Hit(v.clone()),
                None => OpResult::Miss,
            };
            let r1 = rfp.execute(OpCode::Get, &key, None);
            let r2 = sr.execute_sr(OpCode::Get, &key, None);
            let r3 = bypass.execute_bypass_get(&key);
            assert_eq!(r1, expected, "rfp diverged from the model at op {i}");
            assert_eq!(r2, expected, "server-reply diverged from the model at op {i}");
            assert_eq!(r3, expected, "bypass diverged from the model at op {i}");
        } else {
            let len = rng.random_range(1..48);
            let value: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            assert_eq!(rfp.execute(OpCode::Put, &key, Some(&value)), OpResult::PutOk);
            assert_eq!(sr.execute_sr(OpCode::Put, &key, Some(&value)), OpResult::PutOk);
            // Bypass serves PUTs through the server-reply path.
            assert_eq!(
                bypass.execute_sr(OpCode::Put, &key, Some(&value)),
                OpResult::PutOk
            );
            model.insert(key, value);
        }
    }
}
