//! A client-server key-value store where the server never touches the
//! network.
//!
//! Clients push requests into per-session server buffers with one-sided
//! RDMA-writes; server workers poll those buffers, execute against a
//! partitioned in-memory store, and publish results into local response
//! rings; clients then fetch results back with one-sided RDMA-reads sized so
//! that one read usually carries both the done flag and the whole result.
//! Because a NIC serves in-bound operations several times faster than it can
//! issue out-bound ones, moving the reply direction onto the clients lifts
//! the server's throughput ceiling well above the classical server-reply
//! design; a simplified index-bypass design is included as a second
//! baseline.
//!
//! Everything runs over an emulated RDMA transport ([`rdma`]) with a
//! calibrated NIC cost model, so protocol behavior and system-level
//! throughput/latency can be reproduced deterministically without hardware.
//! The [`bench`] module wires workloads, paradigms, and the transport into
//! measured runs; see the `bench` binary for the CLI.

pub mod baselines;
pub mod bench;
pub mod protocol;
pub mod rdma;
pub mod store;
pub mod workload;
