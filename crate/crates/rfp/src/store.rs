//! Partitioned in-memory key-value store, cache mode.
//!
//! The key space is split across server workers in exclusive-read
//! exclusive-write fashion: one worker owns each partition outright, so no
//! partition ever needs a lock and every per-partition history is trivially
//! serial. Clients and the server share [`partition_for_key`], so the worker
//! a client sends to is always the worker that owns the key.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::protocol::frame::MAX_VALUE;

/// Largest storable value; bounded by what a response frame can carry.
pub const MAX_VALUE_LEN: usize = MAX_VALUE;
/// Largest storable key (16-bit length field in the request frame).
pub const MAX_KEY_LEN: usize = u16::MAX as usize;

/// Seed for key placement hashing.
pub const PARTITION_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

/// FNV-1a over the bytes, then a splitmix64 finalizer to spread the low
/// bits. Fixed-width arithmetic only; stable across platforms and runs.
pub fn hash64(seed: u64, bytes: &[u8]) -> u64 {
    const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // splitmix64 finalizer
    h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^ (h >> 31)
}

/// Owning partition for a key among `partitions` workers. Deterministic and
/// uniform for random keys; used identically by clients (to pick a server
/// worker) and by the server (to place data).
pub fn partition_for_key(key: &[u8], partitions: usize) -> usize {
    debug_assert!(partitions >= 1);
    (hash64(PARTITION_SEED, key) % partitions as u64) as usize
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("value of {0} bytes exceeds the {MAX_VALUE_LEN}-byte bound")]
    ValueTooLarge(usize),
    #[error("key of {0} bytes exceeds the {MAX_KEY_LEN}-byte bound")]
    KeyTooLarge(usize),
    #[error("empty keys are not storable")]
    EmptyKey,
}

/// One worker's shard of the table. `capacity_bytes`, when set, bounds the
/// sum of stored key+value bytes; overflow evicts in insertion (FIFO)
/// order. Overwrites keep the key's original queue position.
#[derive(Debug)]
pub struct Partition {
    owner_worker: usize,
    table: HashMap<Vec<u8>, Vec<u8>>,
    insertion_order: VecDeque<Vec<u8>>,
    bytes_used: usize,
    capacity_bytes: Option<usize>,
}

impl Partition {
    pub fn new(owner_worker: usize, capacity_bytes: Option<usize>) -> Self {
        Partition {
            owner_worker,
            table: HashMap::new(),
            insertion_order: VecDeque::new(),
            bytes_used: 0,
            capacity_bytes,
        }
    }

    pub fn owner_worker(&self) -> usize {
        self.owner_worker
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn bytes_used(&self) -> usize {
        self.bytes_used
    }

    /// Value of the most recent put, or `None`.
    pub fn get(&self, worker: usize, key: &[u8]) -> Option<&[u8]> {
        debug_assert_eq!(worker, self.owner_worker, "EREW violation");
        self.table.get(key).map(Vec::as_slice)
    }

    pub fn put(&mut self, worker: usize, key: &[u8], value: Vec<u8>) -> Result<(), StoreError> {
        debug_assert_eq!(worker, self.owner_worker, "EREW violation");
        if key.is_empty() {
            return Err(StoreError::EmptyKey);
        }
        if key.len() > MAX_KEY_LEN {
            return Err(StoreError::KeyTooLarge(key.len()));
        }
        if value.len() > MAX_VALUE_LEN {
            return Err(StoreError::ValueTooLarge(value.len()));
        }
        match self.table.get_mut(key) {
            Some(existing) => {
                self.bytes_used = self.bytes_used - existing.len() + value.len();
                *existing = value;
            }
            None => {
                self.bytes_used += key.len() + value.len();
                self.insertion_order.push_back(key.to_vec());
                self.table.insert(key.to_vec(), value);
            }
        }
        if let Some(cap) = self.capacity_bytes {
            while self.bytes_used > cap {
                let Some(victim) = self.insertion_order.pop_front() else {
                    break;
                };
                if let Some(value) = self.table.remove(&victim) {
                    self.bytes_used -= victim.len() + value.len();
                }
            }
        }
        Ok(())
    }
}
