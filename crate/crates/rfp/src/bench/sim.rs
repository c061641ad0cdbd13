//! Discrete-event experiment driver.
//!
//! Everything — clients, server workers, NICs — advances over the
//! emulator's single virtual clock, so a run is a pure function of its
//! config: clients are state machines stepped by op completions, workers
//! are stepped by request-buffer deliveries and a serial per-worker CPU
//! timer, and all randomness comes from per-client seeded streams.
//!
//! A run has two phases. Preload PUTs every key once (spread round-robin
//! over clients); measurement starts at the virtual instant the last
//! preload completes and covers exactly `ops` requests. Utilization
//! counters are snapshotted at the barrier and at the final measured
//! completion, so the report's bottleneck attribution sees only the
//! measured window.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use crate::baselines::bypass::{self, BypassArena, BypassIndex};
use crate::baselines::reply::{reply_session_setup, ReplyClientSession, ReplyServerSession};
use crate::protocol::frame::{self, OpCode, RequestFrame, ResponseBody};
use crate::protocol::session::{
    session_setup, ClientSession, FetchOutcome, ServerSession, SessionConfig,
};
use crate::rdma::{
    Completion, EmuEvent, Emulator, Mode, NicCounters, NicId, OpId, Posting,
};
use crate::store::{partition_for_key, Partition};
use crate::workload::{encode_key, encode_value, Distribution, TraceRecord, ZipfTable};

use super::config::{Paradigm, RunConfig, WorkloadSource};
use super::histogram::LatencyHistogram;
use super::report::{BypassStats, HistogramBucket, Percentiles, RunReport, TraceStats};
use super::BenchError;

/// Per-client operation source: deterministic preload walk, then an
/// endless measured stream.
enum ClientWorkload {
    Synthetic {
        gen: crate::workload::Generator,
        key_size: usize,
        value_size: usize,
        next_preload: u64,
        stride: u64,
        key_count: u64,
    },
    Trace {
        records: Arc<Vec<TraceRecord>>,
        unique: Arc<Vec<usize>>,
        preload_pos: usize,
        pos: usize,
        stride: usize,
        rng: rand_chacha::ChaCha8Rng,
        get_fraction: f64,
    },
}

impl ClientWorkload {
    fn next_preload(&mut self) -> Option<(Vec<u8>, Vec<u8>)> {
        match self {
            ClientWorkload::Synthetic {
                key_size,
                value_size,
                next_preload,
                stride,
                key_count,
                ..
            } => {
                if *next_preload >= *key_count {
                    return None;
                }
                let index = *next_preload;
                *next_preload += *stride;
                Some((encode_key(index, *key_size), encode_value(index, 0, *value_size)))
            }
            ClientWorkload::Trace { records, unique, preload_pos, stride, .. } => {
                if *preload_pos >= unique.len() {
                    return None;
                }
                let rec = &records[unique[*preload_pos]];
                *preload_pos += *stride;
                Some((rec.key.clone(), rec.value.clone()))
            }
        }
    }

    fn next_measured(&mut self) -> (OpCode, Vec<u8>, Option<Vec<u8>>) {
        match self {
            ClientWorkload::Synthetic { gen, .. } => match gen.next_op() {
                crate::workload::Op::Get { key } => (OpCode::Get, key, None),
                crate::workload::Op::Put { key, value } => (OpCode::Put, key, Some(value)),
            },
            ClientWorkload::Trace { records, pos, stride, rng, get_fraction, .. } => {
                use rand::Rng;
                let rec = &records[*pos % records.len()];
                *pos += *stride;
                let is_get = rng.random::<f64>() < *get_fraction;
                if is_get {
                    (OpCode::Get, rec.key.clone(), None)
                } else {
                    (OpCode::Put, rec.key.clone(), Some(rec.value.clone()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    ReqWrite,
    Fetch,
    FetchTail,
    SrReqWrite,
    ReplyWrite,
    BucketRead,
    ValueRead,
}

#[derive(Debug, Clone, Copy)]
struct OpCtx {
    client: u32,
    purpose: Purpose,
}

struct Current {
    kind: OpCode,
    key: Vec<u8>,
    value: Option<Vec<u8>>,
    sid: u32,
    start_ns: u64,
    measured: bool,
    /// RDMA ops so far, for the paradigms the session object doesn't track.
    rt: u32,
    chain_pos: usize,
    attempts: u32,
    expect: Option<bypass::SlotEntry>,
}

struct ClientState {
    wl: ClientWorkload,
    preloading: bool,
    stopped: bool,
    current: Option<Current>,
}

struct WorkerState {
    queue: VecDeque<u32>,
    pending: Option<(u32, RequestFrame)>,
    busy_ns: u64,
}

#[derive(Clone)]
struct Snapshot {
    time: u64,
    server: NicCounters,
    machines: Vec<NicCounters>,
    worker_busy: Vec<u64>,
}

struct Driver {
    cfg: RunConfig,
    session_cfg: SessionConfig,
    emu: Emulator,
    server_nic: NicId,
    machine_nics: Vec<NicId>,
    partitions: Vec<Partition>,
    rfp_client: Vec<ClientSession>,
    rfp_server: Vec<ServerSession>,
    sr_client: Vec<ReplyClientSession>,
    sr_server: Vec<ReplyServerSession>,
    index: Option<BypassIndex>,
    arenas: Vec<BypassArena>,
    workers: Vec<WorkerState>,
    clients: Vec<ClientState>,
    queued: Vec<bool>,
    op_ctx: HashMap<u64, OpCtx>,

    preload_remaining: usize,
    measured_issued: u64,
    measured_completed: u64,
    duration_ops: u64,
    trace_stats: Option<TraceStats>,
    barrier: Option<Snapshot>,
    end: Option<Snapshot>,

    latency: LatencyHistogram,
    rt_hist: BTreeMap<u32, u64>,
    sum_rt: u64,
    gets: u64,
    puts: u64,
    measured_probes: u64,
    version_retries: u64,
}

pub fn run_discrete(cfg: &RunConfig) -> Result<RunReport, BenchError> {
    let mut driver = Driver::new(cfg)?;
    driver.kickoff()?;
    driver.event_loop()?;
    driver.into_report()
}

impl Driver {
    fn new(cfg: &RunConfig) -> Result<Self, BenchError> {
        let paradigm = cfg.paradigm;
        let workers = cfg.server_workers;
        let clients = cfg.client_threads;

        // Workload sources, plus the sizes sessions must accommodate.
        let mut trace_stats = None;
        let (per_client, max_key, max_value): (Vec<ClientWorkload>, usize, usize) =
            match &cfg.workload {
                WorkloadSource::Synthetic(spec) => {
                    spec.validate()?;
                    let zipf = match spec.distribution {
                        Distribution::Uniform => None,
                        Distribution::Zipf { theta } => {
                            Some(Arc::new(ZipfTable::new(theta, spec.key_count)))
                        }
                    };
                    let wl = (0..clients)
                        .map(|c| ClientWorkload::Synthetic {
                            gen: crate::workload::Generator::with_table(
                                spec.clone(),
                                zipf.clone(),
                                c as u64,
                            ),
                            key_size: spec.key_size,
                            value_size: spec.value_size,
                            next_preload: c as u64,
                            stride: clients as u64,
                            key_count: spec.key_count,
                        })
                        .collect();
                    (wl, spec.key_size, spec.value_size)
                }
                WorkloadSource::Trace { path, get_fraction, seed, .. } => {
                    let records = Arc::new(crate::workload::read_trace(path)?);
                    if records.is_empty() {
                        return Err(BenchError::Corruption("trace has no records".into()));
                    }
                    let mut seen = HashSet::new();
                    let mut unique = Vec::new();
                    let mut max_key = 0;
                    let mut max_value = 0;
                    let mut value_bytes = 0u64;
                    for (i, rec) in records.iter().enumerate() {
                        max_key = max_key.max(rec.key.len());
                        max_value = max_value.max(rec.value.len());
                        value_bytes += rec.value.len() as u64;
                        if seen.insert(rec.key.clone()) {
                            unique.push(i);
                        }
                    }
                    trace_stats = Some(TraceStats {
                        records: records.len() as u64,
                        unique_keys: unique.len() as u64,
                        mean_value_bytes: value_bytes as f64 / records.len() as f64,
                        max_value_bytes: max_value,
                    });
                    let unique = Arc::new(unique);
                    let wl = (0..clients)
                        .map(|c| {
                            use rand::SeedableRng;
                            let mut s = [0u8; 32];
                            s[..8].copy_from_slice(&seed.to_le_bytes());
                            s[8..16].copy_from_slice(&(c as u64).to_le_bytes());
                            ClientWorkload::Trace {
                                records: records.clone(),
                                unique: unique.clone(),
                                preload_pos: c,
                                pos: c,
                                stride: clients,
                                rng: rand_chacha::ChaCha8Rng::from_seed(s),
                                get_fraction: *get_fraction,
                            }
                        })
                        .collect();
                    (wl, max_key, max_value)
                }
            };

        let session_cfg = cfg.session_config(max_value, max_key);
        session_cfg.validate()?;

        let mut emu = Emulator::new(Mode::DiscreteEvent, cfg.profile.clone());
        let server_nic = emu.add_nic();
        let machine_nics: Vec<NicId> = (0..cfg.client_machines)
            .map(|m| {
                let nic = emu.add_nic();
                emu.set_active_issuers(nic, cfg.threads_on_machine(m));
                nic
            })
            .collect();

        let partitions: Vec<Partition> = (0..workers)
            .map(|w| Partition::new(w, cfg.store_capacity_bytes))
            .collect();

        let mut rfp_client = Vec::new();
        let mut rfp_server = Vec::new();
        let mut sr_client = Vec::new();
        let mut sr_server = Vec::new();
        let mut conns = Vec::new();
        for c in 0..clients {
            let nic = machine_nics[cfg.machine_of(c)];
            for _w in 0..workers {
                match paradigm {
                    Paradigm::Rfp => {
                        let (cs, ss) = session_setup(&mut emu, nic, server_nic, session_cfg)?;
                        conns.push(cs.conn);
                        rfp_client.push(cs);
                        rfp_server.push(ss);
                    }
                    Paradigm::ServerReply | Paradigm::Bypass => {
                        let (cs, ss) =
                            reply_session_setup(&mut emu, nic, server_nic, session_cfg)?;
                        conns.push(cs.conn);
                        sr_client.push(cs);
                        sr_server.push(ss);
                    }
                }
            }
        }

        let index = (paradigm == Paradigm::Bypass).then(|| {
            let key_capacity = match &cfg.workload {
                WorkloadSource::Synthetic(spec) => spec.key_count,
                WorkloadSource::Trace { .. } => 4 * 1024,
            };
            BypassIndex::create(
                &mut emu,
                server_nic,
                &conns,
                key_capacity,
                workers,
                cfg.probe_depth,
                max_value,
            )
        });

        let arenas = index
            .as_ref()
            .map(|i| (0..workers).map(|w| i.new_arena(w)).collect())
            .unwrap_or_default();

        Ok(Driver {
            cfg: cfg.clone(),
            session_cfg,
            emu,
            server_nic,
            machine_nics,
            partitions,
            rfp_client,
            rfp_server,
            sr_client,
            sr_server,
            index,
            arenas,
            workers: (0..workers)
                .map(|_| WorkerState { queue: VecDeque::new(), pending: None, busy_ns: 0 })
                .collect(),
            clients: per_client
                .into_iter()
                .map(|wl| ClientState {
                    wl,
                    preloading: true,
                    stopped: false,
                    current: None,
                })
                .collect(),
            queued: vec![false; clients * workers],
            op_ctx: HashMap::new(),
            preload_remaining: clients,
            measured_issued: 0,
            measured_completed: 0,
            duration_ops: cfg.workload.ops(),
            trace_stats,
            barrier: None,
            end: None,
            latency: LatencyHistogram::new(),
            rt_hist: BTreeMap::new(),
            sum_rt: 0,
            gets: 0,
            puts: 0,
            measured_probes: 0,
            version_retries: 0,
        })
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            time: self.emu.now_ns(),
            server: self.emu.nic_counters(self.server_nic),
            machines: self.machine_nics.iter().map(|&n| self.emu.nic_counters(n)).collect(),
            worker_busy: self.workers.iter().map(|w| w.busy_ns).collect(),
        }
    }

    fn kickoff(&mut self) -> Result<(), BenchError> {
        for c in 0..self.clients.len() as u32 {
            self.begin_next(c)?;
        }
        Ok(())
    }

    fn event_loop(&mut self) -> Result<(), BenchError> {
        while let Some(ev) = self.emu.advance_raw() {
            match ev {
                EmuEvent::Timer { token, .. } => self.on_worker_done(token as usize)?,
                EmuEvent::Delivered { op, .. } => self.on_delivered(op)?,
                EmuEvent::Completed(c) => self.on_completed(c)?,
            }
        }
        if self.measured_completed != self.duration_ops {
            return Err(BenchError::Corruption(format!(
                "run drained after {} of {} measured ops",
                self.measured_completed, self.duration_ops
            )));
        }
        Ok(())
    }

    // ---- client side ----------------------------------------------------

    fn begin_next(&mut self, c: u32) -> Result<(), BenchError> {
        let ci = c as usize;
        if self.clients[ci].stopped {
            return Ok(());
        }
        let (kind, key, value, measured) = if self.clients[ci].preloading {
            match self.clients[ci].wl.next_preload() {
                Some((key, value)) => (OpCode::Put, key, Some(value), false),
                None => {
                    self.clients[ci].preloading = false;
                    self.preload_remaining -= 1;
                    if self.preload_remaining == 0 {
                        self.start_measured_phase()?;
                    }
                    return Ok(());
                }
            }
        } else {
            if self.measured_issued >= self.duration_ops {
                self.clients[ci].stopped = true;
                return Ok(());
            }
            self.measured_issued += 1;
            let (kind, key, value) = self.clients[ci].wl.next_measured();
            (kind, key, value, true)
        };

        let worker = partition_for_key(&key, self.workers.len());
        let sid = c * self.workers.len() as u32 + worker as u32;
        self.clients[ci].current = Some(Current {
            kind,
            key,
            value,
            sid,
            start_ns: self.emu.now_ns(),
            measured,
            rt: 0,
            chain_pos: 0,
            attempts: 0,
            expect: None,
        });
        self.dispatch(c)
    }

    fn start_measured_phase(&mut self) -> Result<(), BenchError> {
        debug_assert!(self.barrier.is_none());
        self.barrier = Some(self.snapshot());
        for c in 0..self.clients.len() as u32 {
            self.begin_next(c)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, c: u32) -> Result<(), BenchError> {
        let ci = c as usize;
        let cur = self.clients[ci].current.as_mut().expect("dispatch without a request");
        let sid = cur.sid as usize;
        let inline_threshold = self.emu.profile().inline_threshold;
        match (self.cfg.paradigm, cur.kind) {
            (Paradigm::Rfp, _) => {
                let frame = frame::encode_request(
                    cur.kind,
                    &cur.key,
                    cur.value.as_deref(),
                    self.session_cfg.request_capacity,
                )?;
                let s = &mut self.rfp_client[sid];
                s.begin_request(frame.len())?;
                let op = self.emu.rdma_write(
                    s.conn,
                    s.request_region,
                    0,
                    &frame,
                    frame.len() <= inline_threshold,
                    Posting::Blocking,
                )?;
                self.track(op, c, Purpose::ReqWrite);
            }
            (Paradigm::ServerReply, _) | (Paradigm::Bypass, OpCode::Put) => {
                let frame = frame::encode_request(
                    cur.kind,
                    &cur.key,
                    cur.value.as_deref(),
                    self.session_cfg.request_capacity,
                )?;
                let s = &mut self.sr_client[sid];
                s.begin_request(frame.len())?;
                cur.rt = 1;
                let op = self.emu.rdma_write(
                    s.conn,
                    s.request_region,
                    0,
                    &frame,
                    frame.len() <= inline_threshold,
                    Posting::Blocking,
                )?;
                self.track(op, c, Purpose::SrReqWrite);
            }
            (Paradigm::Bypass, OpCode::Get) => {
                cur.rt = 1;
                cur.chain_pos = 0;
                if cur.measured {
                    self.measured_probes += 1;
                }
                self.issue_bucket_read(c)?;
            }
        }
        Ok(())
    }

    fn track(&mut self, op: OpId, client: u32, purpose: Purpose) {
        self.op_ctx.insert(op.0, OpCtx { client, purpose });
    }

    fn issue_bucket_read(&mut self, c: u32) -> Result<(), BenchError> {
        let cur = self.clients[c as usize].current.as_ref().unwrap();
        let index = self.index.as_ref().expect("bypass without index");
        let chain = index.bucket_chain(&cur.key);
        let bucket = chain[cur.chain_pos];
        let conn = self.sr_client[cur.sid as usize].conn;
        let op = self.emu.rdma_read(
            conn,
            index.index_region,
            index.slot_byte_offset(bucket),
            bypass::SLOT_BYTES,
        )?;
        self.track(op, c, Purpose::BucketRead);
        Ok(())
    }

    fn on_delivered(&mut self, op: OpId) -> Result<(), BenchError> {
        let Some(&OpCtx { client, purpose }) = self.op_ctx.get(&op.0) else {
            return Ok(());
        };
        match purpose {
            Purpose::ReqWrite | Purpose::SrReqWrite => {
                let sid = self.clients[client as usize]
                    .current
                    .as_ref()
                    .expect("delivery without a request")
                    .sid;
                self.worker_wake(sid)
            }
            Purpose::ReplyWrite => self.consume_reply(client),
            _ => Ok(()),
        }
    }

    fn on_completed(&mut self, comp: Completion) -> Result<(), BenchError> {
        let ctx = self
            .op_ctx
            .remove(&comp.op.0)
            .expect("completion for untracked op");
        if !comp.is_ok() {
            return Err(BenchError::Corruption(format!(
                "op failed with {:?} (purpose {:?})",
                comp.status, ctx.purpose
            )));
        }
        let c = ctx.client;
        match ctx.purpose {
            Purpose::ReqWrite => {
                let sid = self.current_sid(c);
                let (off, len) = self.rfp_client[sid].fetch_plan();
                let conn = self.rfp_client[sid].conn;
                let ring = self.rfp_client[sid].ring_region;
                let op = self.emu.rdma_read(conn, ring, off, len)?;
                self.track(op, c, Purpose::Fetch);
            }
            Purpose::Fetch => {
                let sid = self.current_sid(c);
                let data = comp.data.expect("read without data");
                match self.rfp_client[sid].on_fetch(&data)? {
                    FetchOutcome::NotReady => {
                        let (off, len) = self.rfp_client[sid].fetch_plan();
                        let conn = self.rfp_client[sid].conn;
                        let ring = self.rfp_client[sid].ring_region;
                        let op = self.emu.rdma_read(conn, ring, off, len)?;
                        self.track(op, c, Purpose::Fetch);
                    }
                    FetchOutcome::NeedTail { offset, len } => {
                        let conn = self.rfp_client[sid].conn;
                        let ring = self.rfp_client[sid].ring_region;
                        let op = self.emu.rdma_read(conn, ring, offset, len)?;
                        self.track(op, c, Purpose::FetchTail);
                    }
                    FetchOutcome::Ready { body, round_trips } => {
                        self.finish_with_body(c, &body, round_trips)?;
                    }
                }
            }
            Purpose::FetchTail => {
                let sid = self.current_sid(c);
                let data = comp.data.expect("read without data");
                match self.rfp_client[sid].on_tail(&data)? {
                    FetchOutcome::Ready { body, round_trips } => {
                        self.finish_with_body(c, &body, round_trips)?;
                    }
                    other => {
                        return Err(BenchError::Corruption(format!(
                            "tail read produced {other:?}"
                        )))
                    }
                }
            }
            Purpose::SrReqWrite | Purpose::ReplyWrite => {}
            Purpose::BucketRead => self.on_bucket(c, &comp.data.expect("read without data"))?,
            Purpose::ValueRead => self.on_value(c, &comp.data.expect("read without data"))?,
        }
        Ok(())
    }

    fn current_sid(&self, c: u32) -> usize {
        self.clients[c as usize]
            .current
            .as_ref()
            .expect("no request in flight")
            .sid as usize
    }

    /// Decode an rfp response body and finish the request.
    fn finish_with_body(&mut self, c: u32, body: &[u8], rt: u32) -> Result<(), BenchError> {
        let kind = self.clients[c as usize].current.as_ref().unwrap().kind;
        let response = frame::decode_response(kind, body)?;
        self.validate_response(c, &response)?;
        self.complete(c, rt)
    }

    fn validate_response(&self, c: u32, response: &ResponseBody) -> Result<(), BenchError> {
        let cur = self.clients[c as usize].current.as_ref().unwrap();
        let ok = matches!(
            (cur.kind, response),
            (OpCode::Put, ResponseBody::PutAck(frame::PutStatus::Ok))
                | (OpCode::Get, ResponseBody::GetHit(_) | ResponseBody::GetMiss)
        );
        if !ok {
            return Err(BenchError::Corruption(format!(
                "unexpected response {response:?} for {:?}",
                cur.kind
            )));
        }
        Ok(())
    }

    fn consume_reply(&mut self, c: u32) -> Result<(), BenchError> {
        let sid = self.current_sid(c);
        let Some(body) = self.sr_client[sid].try_consume_reply(&mut self.emu) else {
            return Err(BenchError::Corruption("reply delivered but not consumable".into()));
        };
        let kind = self.clients[c as usize].current.as_ref().unwrap().kind;
        let response = frame::decode_response(kind, &body)?;
        self.validate_response(c, &response)?;
        // One client write plus one server write.
        self.complete(c, 2)
    }

    fn on_bucket(&mut self, c: u32, data: &[u8]) -> Result<(), BenchError> {
        let entry = bypass::parse_slot(data);
        let key_fp = {
            let cur = self.clients[c as usize].current.as_ref().unwrap();
            bypass::fingerprint(&cur.key)
        };
        let index = self.index.as_ref().expect("bypass without index");
        if entry.fingerprint == key_fp {
            let (off, len) = index.value_read_plan(&entry);
            let heap = index.heap_region;
            let cur = self.clients[c as usize].current.as_mut().unwrap();
            cur.expect = Some(entry);
            cur.rt += 1;
            let conn = self.sr_client[cur.sid as usize].conn;
            let op = self.emu.rdma_read(conn, heap, off, len)?;
            self.track(op, c, Purpose::ValueRead);
            return Ok(());
        }
        let probe_depth = index.probe_depth();
        let cur = self.clients[c as usize].current.as_mut().unwrap();
        if entry.fingerprint == 0 || cur.chain_pos + 1 >= probe_depth {
            // Absent key; finish as a GET miss.
            let rt = cur.rt;
            self.validate_response(c, &ResponseBody::GetMiss)?;
            return self.complete(c, rt);
        }
        cur.chain_pos += 1;
        cur.rt += 1;
        if cur.measured {
            self.measured_probes += 1;
        }
        self.issue_bucket_read(c)
    }

    fn on_value(&mut self, c: u32, data: &[u8]) -> Result<(), BenchError> {
        let cur = self.clients[c as usize].current.as_mut().unwrap();
        let entry = cur.expect.take().expect("value read without a slot entry");
        match BypassIndex::check_value(&entry, data) {
            Ok(_value) => {
                let rt = cur.rt;
                self.complete(c, rt)
            }
            Err(_) => {
                self.version_retries += 1;
                cur.attempts += 1;
                if cur.attempts >= self.cfg.max_fetch_attempts {
                    return Err(BenchError::RetryExhausted {
                        attempts: cur.attempts,
                    });
                }
                cur.rt += 1;
                if cur.measured {
                    self.measured_probes += 1;
                }
                self.issue_bucket_read(c)
            }
        }
    }

    fn complete(&mut self, c: u32, rt: u32) -> Result<(), BenchError> {
        let cur = self.clients[c as usize].current.take().expect("completing nothing");
        if cur.measured {
            self.latency.record(self.emu.now_ns() - cur.start_ns);
            *self.rt_hist.entry(rt).or_insert(0) += 1;
            self.sum_rt += rt as u64;
            match cur.kind {
                OpCode::Get => self.gets += 1,
                OpCode::Put => self.puts += 1,
            }
            self.measured_completed += 1;
            if self.measured_completed == self.duration_ops {
                self.end = Some(self.snapshot());
            }
        }
        self.begin_next(c)
    }

    // ---- server side ----------------------------------------------------

    fn worker_of(&self, sid: u32) -> usize {
        sid as usize % self.workers.len()
    }

    fn worker_wake(&mut self, sid: u32) -> Result<(), BenchError> {
        let w = self.worker_of(sid);
        if self.workers[w].pending.is_some() {
            if !self.queued[sid as usize] {
                self.queued[sid as usize] = true;
                self.workers[w].queue.push_back(sid);
            }
            return Ok(());
        }
        self.try_start_processing(w, sid)?;
        Ok(())
    }

    /// Poll one session; on a complete frame, occupy the worker for the
    /// processing window.
    fn try_start_processing(&mut self, w: usize, sid: u32) -> Result<bool, BenchError> {
        let frame = match self.cfg.paradigm {
            Paradigm::Rfp => self.rfp_server[sid as usize].consume(&mut self.emu)?,
            _ => self.sr_server[sid as usize].consume(&mut self.emu)?,
        };
        let Some(frame) = frame else {
            return Ok(false);
        };
        self.workers[w].pending = Some((sid, frame));
        self.emu
            .schedule_timer(self.emu.now_ns() + self.cfg.worker_process_ns, w as u64);
        Ok(true)
    }

    fn on_worker_done(&mut self, w: usize) -> Result<(), BenchError> {
        let (sid, frame) = self.workers[w].pending.take().expect("timer without work");
        self.workers[w].busy_ns += self.cfg.worker_process_ns;

        let body = match frame.kind {
            OpCode::Get => match self.partitions[w].get(w, &frame.key) {
                Some(v) => ResponseBody::GetHit(v.to_vec()),
                None => ResponseBody::GetMiss,
            },
            OpCode::Put => {
                let value = frame.value.clone().unwrap_or_default();
                if let Some(index) = &self.index {
                    index
                        .upsert(&mut self.emu, w, &mut self.arenas[w], &frame.key, &value)
                        .map_err(BenchError::Bypass)?;
                }
                match self.partitions[w].put(w, &frame.key, value) {
                    Ok(()) => ResponseBody::PutAck(frame::PutStatus::Ok),
                    Err(_) => ResponseBody::PutAck(frame::PutStatus::Error),
                }
            }
        };
        let body_bytes = frame::encode_response(&body);

        match self.cfg.paradigm {
            Paradigm::Rfp => {
                self.rfp_server[sid as usize].publish(&mut self.emu, &body_bytes)?;
            }
            Paradigm::ServerReply | Paradigm::Bypass => {
                let s = &self.sr_server[sid as usize];
                let reply = s.encode_reply(&body_bytes)?;
                let inline = reply.len() <= self.emu.profile().inline_threshold;
                let op = self.emu.rdma_write(
                    s.conn,
                    s.reply_region,
                    0,
                    &reply,
                    inline,
                    Posting::Posted,
                )?;
                let client = sid / self.workers.len() as u32;
                self.track(op, client, Purpose::ReplyWrite);
            }
        }

        // Pull queued sessions until one has a complete frame.
        while let Some(next) = self.workers[w].queue.pop_front() {
            self.queued[next as usize] = false;
            if self.try_start_processing(w, next)? {
                break;
            }
        }
        Ok(())
    }

    // ---- reporting -------------------------------------------------------

    fn into_report(self) -> Result<RunReport, BenchError> {
        let barrier = self.barrier.expect("run finished without a barrier");
        let end = self.end.expect("run finished without an end snapshot");
        let duration_ns = (end.time - barrier.time).max(1);
        let dur = duration_ns as f64;

        let in_busy = (end.server.inbound_busy_ns - barrier.server.inbound_busy_ns) as f64;
        let in_wire = (end.server.inbound_wire_ns - barrier.server.inbound_wire_ns) as f64;
        let out_busy = (end.server.posted_busy_ns - barrier.server.posted_busy_ns) as f64;
        let out_wire = (end.server.posted_wire_ns - barrier.server.posted_wire_ns) as f64;
        let worker_util = end
            .worker_busy
            .iter()
            .zip(&barrier.worker_busy)
            .map(|(e, b)| (e - b) as f64 / dur)
            .fold(0.0, f64::max);
        let client_util = (0..self.machine_nics.len())
            .map(|m| {
                let threads = self.cfg.threads_on_machine(m).max(1) as f64;
                let busy = (end.machines[m].blocking_out_ns
                    - barrier.machines[m].blocking_out_ns) as f64;
                busy / (threads * dur)
            })
            .fold(0.0, f64::max);

        let in_label = if in_wire * 2.0 >= in_busy {
            "server_inbound_bandwidth"
        } else {
            "server_inbound_iops"
        };
        let out_label = if out_wire * 2.0 >= out_busy {
            "server_outbound_bandwidth"
        } else {
            "server_outbound_iops"
        };
        let candidates = [
            (in_busy / dur, in_label),
            (out_busy / dur, out_label),
            (client_util, "client_outbound"),
            (worker_util, "worker_cpu"),
        ];
        let bottleneck = candidates
            .iter()
            .fold(candidates[0], |best, &c| if c.0 > best.0 { c } else { best })
            .1
            .to_string();

        let completed = self.measured_completed;
        debug_assert_eq!(completed, self.gets + self.puts);
        let percentiles = Percentiles {
            p15_ns: self.latency.percentile(0.15).unwrap_or(0.0),
            p50_ns: self.latency.percentile(0.50).unwrap_or(0.0),
            p99_ns: self.latency.percentile(0.99).unwrap_or(0.0),
            p100_ns: self.latency.percentile(1.0).unwrap_or(0.0),
        };
        let bypass_stats = if self.cfg.paradigm == Paradigm::Bypass {
            Some(BypassStats {
                mean_probes_per_get: if self.gets > 0 {
                    self.measured_probes as f64 / self.gets as f64
                } else {
                    0.0
                },
                version_retries: self.version_retries,
            })
        } else {
            None
        };

        Ok(RunReport {
            paradigm: self.cfg.paradigm,
            mode: self.cfg.mode,
            iops: completed as f64 / (duration_ns as f64 * 1e-9),
            duration_ns,
            completed_ops: completed,
            completed_gets: self.gets,
            completed_puts: self.puts,
            mean_round_trips: self.sum_rt as f64 / completed as f64,
            round_trip_histogram: self.rt_hist.into_iter().collect(),
            percentiles,
            server_nic_ops: end.server.ops_issued - barrier.server.ops_issued,
            bottleneck,
            bypass: bypass_stats,
            trace_stats: self.trace_stats,
            latency_histogram: self
                .latency
                .nonzero_buckets()
                .into_iter()
                .map(|(upper_ns, count)| HistogramBucket { upper_ns, count })
                .collect(),
            config: self.cfg,
        })
    }
}
