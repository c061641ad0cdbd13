//! Real-time functional runner: one OS thread per client and per server
//! worker over the emulator's immediate-completion mode. No cost model, no
//! virtual clock — this mode exists to exercise the protocol state machines
//! under genuine concurrency and real polling, and its wall-clock numbers
//! carry no calibrated meaning.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::time::Instant;

use crate::baselines::bypass::{self, BypassIndex};
use crate::baselines::reply::{reply_session_setup, ReplyClientSession, ReplyServerSession};
use crate::protocol::frame::{self, OpCode, ResponseBody};
use crate::protocol::session::{session_setup, ClientSession, FetchOutcome, ServerSession};
use crate::rdma::{Emulator, Mode};
use crate::store::{partition_for_key, Partition};
use crate::workload::Distribution;
use crate::workload::ZipfTable;

use super::config::{Paradigm, RunConfig, WorkloadSource};
use super::histogram::LatencyHistogram;
use super::report::{BypassStats, HistogramBucket, Percentiles, RunReport};
use super::BenchError;

enum ClientSessions {
    Rfp(Vec<ClientSession>),
    Sr(Vec<ReplyClientSession>),
}

enum ServerSessions {
    Rfp(Vec<(u32, ServerSession)>),
    Sr(Vec<(u32, ReplyServerSession)>),
}

struct ClientStats {
    latency: LatencyHistogram,
    rt_hist: std::collections::BTreeMap<u32, u64>,
    sum_rt: u64,
    gets: u64,
    puts: u64,
    probes: u64,
    retries: u64,
    last_done: Option<Instant>,
}

impl ClientStats {
    fn new() -> Self {
        ClientStats {
            latency: LatencyHistogram::new(),
            rt_hist: std::collections::BTreeMap::new(),
            sum_rt: 0,
            gets: 0,
            puts: 0,
            probes: 0,
            retries: 0,
            last_done: None,
        }
    }
}

pub fn run_live(cfg: &RunConfig) -> Result<RunReport, BenchError> {
    let paradigm = cfg.paradigm;
    let workers = cfg.server_workers;
    let clients = cfg.client_threads;

    let spec = match &cfg.workload {
        WorkloadSource::Synthetic(spec) => spec.clone(),
        WorkloadSource::Trace { .. } => {
            return Err(BenchError::Corruption(
                "trace workloads are supported in discrete-event mode only".into(),
            ))
        }
    };
    spec.validate()?;
    let session_cfg = cfg.session_config(spec.value_size, spec.key_size);
    session_cfg.validate()?;
    let zipf = match spec.distribution {
        Distribution::Uniform => None,
        Distribution::Zipf { theta } => Some(Arc::new(ZipfTable::new(theta, spec.key_count))),
    };

    let mut emu = Emulator::new(Mode::RealTime, cfg.profile.clone());
    let server_nic = emu.add_nic();
    let machine_nics: Vec<_> = (0..cfg.client_machines).map(|_| emu.add_nic()).collect();

    let mut client_sessions: Vec<ClientSessions> = Vec::new();
    let mut rfp_by_worker: Vec<Vec<(u32, ServerSession)>> = Vec::new();
    let mut sr_by_worker: Vec<Vec<(u32, ReplyServerSession)>> = Vec::new();
    match paradigm {
        Paradigm::Rfp => rfp_by_worker = (0..workers).map(|_| Vec::new()).collect(),
        _ => sr_by_worker = (0..workers).map(|_| Vec::new()).collect(),
    }
    let mut conns = Vec::new();
    for c in 0..clients {
        let nic = machine_nics[cfg.machine_of(c)];
        match paradigm {
            Paradigm::Rfp => {
                let mut mine = Vec::new();
                for (w, per_worker) in rfp_by_worker.iter_mut().enumerate() {
                    let (cs, ss) = session_setup(&mut emu, nic, server_nic, session_cfg)?;
                    conns.push(cs.conn);
                    mine.push(cs);
                    per_worker.push(((c * workers + w) as u32, ss));
                }
                client_sessions.push(ClientSessions::Rfp(mine));
            }
            _ => {
                let mut mine = Vec::new();
                for (w, per_worker) in sr_by_worker.iter_mut().enumerate() {
                    let (cs, ss) = reply_session_setup(&mut emu, nic, server_nic, session_cfg)?;
                    conns.push(cs.conn);
                    mine.push(cs);
                    per_worker.push(((c * workers + w) as u32, ss));
                }
                client_sessions.push(ClientSessions::Sr(mine));
            }
        }
    }
    let server_side: Vec<ServerSessions> = match paradigm {
        Paradigm::Rfp => rfp_by_worker.into_iter().map(ServerSessions::Rfp).collect(),
        _ => sr_by_worker.into_iter().map(ServerSessions::Sr).collect(),
    };
    let index = (paradigm == Paradigm::Bypass).then(|| {
        Arc::new(BypassIndex::create(
            &mut emu,
            server_nic,
            &conns,
            spec.key_count,
            workers,
            cfg.probe_depth,
            spec.value_size,
        ))
    });

    let emu = Arc::new(Mutex::new(emu));
    let stop = Arc::new(AtomicBool::new(false));
    let barrier = Arc::new(Barrier::new(clients));
    let issued = Arc::new(AtomicU64::new(0));
    let duration_ops = spec.ops;

    let mut client_stats: Vec<ClientStats> = Vec::new();
    let mut measured_span: Option<(Instant, Instant)> = None;

    std::thread::scope(|scope| -> Result<(), BenchError> {
        // Server workers.
        let mut worker_handles = Vec::new();
        for (w, sessions) in server_side.into_iter().enumerate() {
            let emu = emu.clone();
            let stop = stop.clone();
            let index = index.clone();
            let mut partition = Partition::new(w, cfg.store_capacity_bytes);
            let mut arena = index.as_ref().map(|i| i.new_arena(w));
            worker_handles.push(scope.spawn(move || -> Result<(), BenchError> {
                let mut sessions = sessions;
                loop {
                    if stop.load(Ordering::Acquire) {
                        return Ok(());
                    }
                    let mut progressed = false;
                    let mut guard = emu.lock().unwrap();
                    match &mut sessions {
                        ServerSessions::Rfp(list) => {
                            for (_, ss) in list.iter_mut() {
                                if let Some(req) = ss.consume(&mut guard)? {
                                    let body =
                                        execute(&mut partition, w, &index, &mut arena, &mut guard, req)?;
                                    ss.publish(&mut guard, &frame::encode_response(&body))?;
                                    progressed = true;
                                }
                            }
                        }
                        ServerSessions::Sr(list) => {
                            for (_, ss) in list.iter_mut() {
                                if let Some(req) = ss.consume(&mut guard)? {
                                    let body =
                                        execute(&mut partition, w, &index, &mut arena, &mut guard, req)?;
                                    let reply = ss.encode_reply(&frame::encode_response(&body))?;
                                    guard.write_now(ss.conn, ss.reply_region, 0, &reply)?;
                                    progressed = true;
                                }
                            }
                        }
                    }
                    drop(guard);
                    if !progressed {
                        std::thread::yield_now();
                    }
                }
            }));
        }

        // Clients.
        let mut client_handles = Vec::new();
        for (c, sessions) in client_sessions.into_iter().enumerate() {
            let emu = emu.clone();
            let barrier = barrier.clone();
            let issued = issued.clone();
            let index = index.clone();
            let spec = spec.clone();
            let zipf = zipf.clone();
            let max_attempts = cfg.max_fetch_attempts;
            let request_capacity = session_cfg.request_capacity;
            let stride = clients as u64;
            client_handles.push(scope.spawn(move || -> Result<(ClientStats, Instant), BenchError> {
                let mut sessions = sessions;
                let mut stats = ClientStats::new();
                let workers = match &sessions {
                    ClientSessions::Rfp(v) => v.len(),
                    ClientSessions::Sr(v) => v.len(),
                };

                // Preload this client's share of the key space.
                let mut k = c as u64;
                while k < spec.key_count {
                    let key = crate::workload::encode_key(k, spec.key_size);
                    let value = crate::workload::encode_value(k, 0, spec.value_size);
                    let w = partition_for_key(&key, workers);
                    run_one(
                        &emu, &mut sessions, &index, w, OpCode::Put, &key,
                        Some(&value), request_capacity, max_attempts, &mut stats, false,
                    )?;
                    k += stride;
                }

                barrier.wait();
                let start = Instant::now();
                let mut gen = crate::workload::Generator::with_table(spec, zipf, c as u64);
                loop {
                    if issued.fetch_add(1, Ordering::AcqRel) >= duration_ops {
                        break;
                    }
                    let (kind, key, value) = match gen.next_op() {
                        crate::workload::Op::Get { key } => (OpCode::Get, key, None),
                        crate::workload::Op::Put { key, value } => (OpCode::Put, key, Some(value)),
                    };
                    let w = partition_for_key(&key, workers);
                    let t0 = Instant::now();
                    run_one(
                        &emu, &mut sessions, &index, w, kind, &key,
                        value.as_deref(), request_capacity, max_attempts, &mut stats, true,
                    )?;
                    stats.latency.record(t0.elapsed().as_nanos() as u64);
                    stats.last_done = Some(Instant::now());
                }
                Ok((stats, start))
            }));
        }

        let mut earliest_start: Option<Instant> = None;
        let mut latest_end: Option<Instant> = None;
        for h in client_handles {
            let (stats, start) = h.join().expect("client thread panicked")?;
            earliest_start = Some(earliest_start.map_or(start, |s| s.min(start)));
            if let Some(done) = stats.last_done {
                latest_end = Some(latest_end.map_or(done, |e| e.max(done)));
            }
            client_stats.push(stats);
        }
        stop.store(true, Ordering::Release);
        for h in worker_handles {
            h.join().expect("worker thread panicked")?;
        }
        if let (Some(s), Some(e)) = (earliest_start, latest_end) {
            measured_span = Some((s, e));
        }
        Ok(())
    })?;

    // Merge per-thread counters after quiescence.
    let mut latency = LatencyHistogram::new();
    let mut rt_hist = std::collections::BTreeMap::new();
    let (mut sum_rt, mut gets, mut puts, mut probes, mut retries) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for s in &client_stats {
        latency.merge(&s.latency);
        for (&rt, &n) in &s.rt_hist {
            *rt_hist.entry(rt).or_insert(0u64) += n;
        }
        sum_rt += s.sum_rt;
        gets += s.gets;
        puts += s.puts;
        probes += s.probes;
        retries += s.retries;
    }
    let completed = gets + puts;
    if completed != duration_ops {
        return Err(BenchError::Corruption(format!(
            "live run completed {completed} of {duration_ops} ops"
        )));
    }
    let duration_ns = measured_span
        .map(|(s, e)| e.duration_since(s).as_nanos() as u64)
        .unwrap_or(1)
        .max(1);

    // The counter covers the whole run; in the reply-based paradigms every
    // preload PUT produced exactly one server write, so subtracting the key
    // count leaves the measured-phase ops, matching discrete-event reports.
    let total_server_ops = emu.lock().unwrap().nic_counters(server_nic).ops_issued;
    let server_nic_ops = match paradigm {
        Paradigm::Rfp => total_server_ops,
        Paradigm::ServerReply | Paradigm::Bypass => {
            total_server_ops.saturating_sub(spec.key_count)
        }
    };
    Ok(RunReport {
        paradigm,
        mode: cfg.mode,
        iops: completed as f64 / (duration_ns as f64 * 1e-9),
        duration_ns,
        completed_ops: completed,
        completed_gets: gets,
        completed_puts: puts,
        mean_round_trips: sum_rt as f64 / completed as f64,
        round_trip_histogram: rt_hist.into_iter().collect(),
        percentiles: Percentiles {
            p15_ns: latency.percentile(0.15).unwrap_or(0.0),
            p50_ns: latency.percentile(0.50).unwrap_or(0.0),
            p99_ns: latency.percentile(0.99).unwrap_or(0.0),
            p100_ns: latency.percentile(1.0).unwrap_or(0.0),
        },
        server_nic_ops,
        bottleneck: "not_modeled".into(),
        bypass: (paradigm == Paradigm::Bypass).then_some(BypassStats {
            mean_probes_per_get: if gets > 0 { probes as f64 / gets as f64 } else { 0.0 },
            version_retries: retries,
        }),
        trace_stats: None,
        latency_histogram: latency
            .nonzero_buckets()
            .into_iter()
            .map(|(upper_ns, count)| HistogramBucket { upper_ns, count })
            .collect(),
        config: cfg.clone(),
    })
}

fn execute(
    partition: &mut Partition,
    w: usize,
    index: &Option<Arc<BypassIndex>>,
    arena: &mut Option<bypass::BypassArena>,
    emu: &mut Emulator,
    req: frame::RequestFrame,
) -> Result<ResponseBody, BenchError> {
    Ok(match req.kind {
        OpCode::Get => match partition.get(w, &req.key) {
            Some(v) => ResponseBody::GetHit(v.to_vec()),
            None => ResponseBody::GetMiss,
        },
        OpCode::Put => {
            let value = req.value.unwrap_or_default();
            if let (Some(index), Some(arena)) = (index, arena.as_mut()) {
                index.upsert(emu, w, arena, &req.key, &value)?;
            }
            match partition.put(w, &req.key, value) {
                Ok(()) => ResponseBody::PutAck(frame::PutStatus::Ok),
                Err(_) => ResponseBody::PutAck(frame::PutStatus::Error),
            }
        }
    })
}

/// One synchronous request from a live client thread.
#[allow(clippy::too_many_arguments)]
fn run_one(
    emu: &Arc<Mutex<Emulator>>,
    sessions: &mut ClientSessions,
    index: &Option<Arc<BypassIndex>>,
    w: usize,
    kind: OpCode,
    key: &[u8],
    value: Option<&[u8]>,
    request_capacity: usize,
    max_attempts: u32,
    stats: &mut ClientStats,
    measured: bool,
) -> Result<(), BenchError> {
    let rt = match sessions {
        ClientSessions::Rfp(list) => {
            let s = &mut list[w];
            let bytes = frame::encode_request(kind, key, value, request_capacity)?;
            s.begin_request(bytes.len())?;
            emu.lock().unwrap().write_now(s.conn, s.request_region, 0, &bytes)?;
            loop {
                let (off, len) = s.fetch_plan();
                let snap = emu
                    .lock()
                    .unwrap()
                    .read_now(s.conn, s.ring_region, off, len)?
                    .data
                    .expect("read without data");
                match s.on_fetch(&snap)? {
                    FetchOutcome::NotReady => std::thread::yield_now(),
                    FetchOutcome::NeedTail { offset, len } => {
                        let tail = emu
                            .lock()
                            .unwrap()
                            .read_now(s.conn, s.ring_region, offset, len)?
                            .data
                            .expect("read without data");
                        match s.on_tail(&tail)? {
                            FetchOutcome::Ready { body, round_trips } => {
                                frame::decode_response(kind, &body)?;
                                break round_trips;
                            }
                            other => {
                                return Err(BenchError::Corruption(format!(
                                    "tail read produced {other:?}"
                                )))
                            }
                        }
                    }
                    FetchOutcome::Ready { body, round_trips } => {
                        frame::decode_response(kind, &body)?;
                        break round_trips;
                    }
                }
            }
        }
        ClientSessions::Sr(list) => {
            let s = &mut list[w];
            if kind == OpCode::Get && index.is_some() {
                // Bypass GET: probe the exposed index directly.
                let index = index.as_ref().unwrap();
                let fp = bypass::fingerprint(key);
                let mut rt = 0u32;
                let mut attempts = 0u32;
                'retry: loop {
                    let chain = index.bucket_chain(key);
                    for (i, &bucket) in chain.iter().enumerate() {
                        rt += 1;
                        if measured {
                            stats.probes += 1;
                        }
                        let slot = emu
                            .lock()
                            .unwrap()
                            .read_now(
                                s.conn,
                                index.index_region,
                                index.slot_byte_offset(bucket),
                                bypass::SLOT_BYTES,
                            )?
                            .data
                            .expect("read without data");
                        let entry = bypass::parse_slot(&slot);
                        if entry.fingerprint == fp {
                            rt += 1;
                            let (off, len) = index.value_read_plan(&entry);
                            let cell = emu
                                .lock()
                                .unwrap()
                                .read_now(s.conn, index.heap_region, off, len)?
                                .data
                                .expect("read without data");
                            match BypassIndex::check_value(&entry, &cell) {
                                Ok(_) => break 'retry rt,
                                Err(_) => {
                                    stats.retries += 1;
                                    attempts += 1;
                                    if attempts >= max_attempts {
                                        return Err(BenchError::RetryExhausted { attempts });
                                    }
                                    continue 'retry;
                                }
                            }
                        }
                        if entry.fingerprint == 0 || i + 1 == chain.len() {
                            break 'retry rt; // miss
                        }
                    }
                }
            } else {
                let bytes = frame::encode_request(kind, key, value, request_capacity)?;
                s.begin_request(bytes.len())?;
                emu.lock().unwrap().write_now(s.conn, s.request_region, 0, &bytes)?;
                loop {
                    let reply = s.try_consume_reply(&mut emu.lock().unwrap());
                    match reply {
                        Some(body) => {
                            frame::decode_response(kind, &body)?;
                            break 2;
                        }
                        None => std::thread::yield_now(),
                    }
                }
            }
        }
    };
    if measured {
        *stats.rt_hist.entry(rt).or_insert(0) += 1;
        stats.sum_rt += rt as u64;
        match kind {
            OpCode::Get => stats.gets += 1,
            OpCode::Put => stats.puts += 1,
        }
    }
    Ok(())
}
