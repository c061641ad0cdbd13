//! Simplified totally-bypass baseline: the server exposes a bucketized hash
//! index plus a value heap, and clients serve their own GETs with raw
//! RDMA-reads — one read per probed bucket, one read for the value. PUTs
//! still go through the server-reply path, as bypass designs do in practice.
//!
//! This is a round-trip and contention model, not a production index:
//! fingerprints are full 64-bit hashes (collisions are ignored at the scales
//! simulated here) and consistency comes from a version stamp stored both in
//! the bucket slot and at the head of the value cell. A reader that straddles
//! an update sees differing versions and retries.
//!
//! Bucket slot, 24 bytes:
//!
//! ```text
//! offset 0   u64 LE key fingerprint, 0 = empty
//! offset 8   u64 LE value offset in the heap region
//! offset 16  u16 LE value length
//! offset 18  u32 LE version
//! offset 22  2 bytes padding
//! ```
//!
//! Value cell: `u32 LE version` followed by the value bytes, allocated from
//! the owning worker's heap arena on first insert and updated in place
//! afterwards.
//!
//! Probing steps with a stride equal to the partition count, and buckets are
//! a multiple of it, so every bucket a key can touch belongs to the worker
//! that owns the key and the index stays exclusive-write. Lookups stop at a
//! fingerprint match, at an empty slot (keys are never deleted, so an empty
//! slot proves absence), or after `probe_depth` buckets.

use thiserror::Error;

use crate::rdma::{ConnectionId, Emulator, NicId, RegionId};
use crate::store::{hash64, PARTITION_SEED};

pub const SLOT_BYTES: usize = 24;
/// Version stamp at the head of each value cell.
pub const CELL_HEADER: usize = 4;

/// Seed for key fingerprints; distinct from placement so the two hashes are
/// independent.
pub const FINGERPRINT_SEED: u64 = 0xA076_1D64_78BD_642F;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BypassError {
    #[error("no free slot in the key's bucket class")]
    IndexFull,
    #[error("worker {worker} heap arena exhausted")]
    HeapFull { worker: usize },
    #[error("value of {len} bytes exceeds the {cell}-byte cell")]
    ValueTooLargeForCell { len: usize, cell: usize },
}

pub fn fingerprint(key: &[u8]) -> u64 {
    hash64(FINGERPRINT_SEED, key).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotEntry {
    pub fingerprint: u64,
    pub heap_offset: u64,
    pub val_len: u16,
    pub version: u32,
}

pub fn parse_slot(bytes: &[u8]) -> SlotEntry {
    SlotEntry {
        fingerprint: u64::from_le_bytes(bytes[0..8].try_into().unwrap()),
        heap_offset: u64::from_le_bytes(bytes[8..16].try_into().unwrap()),
        val_len: u16::from_le_bytes(bytes[16..18].try_into().unwrap()),
        version: u32::from_le_bytes(bytes[18..22].try_into().unwrap()),
    }
}

fn write_slot(bytes: &mut [u8], entry: &SlotEntry) {
    bytes[0..8].copy_from_slice(&entry.fingerprint.to_le_bytes());
    bytes[8..16].copy_from_slice(&entry.heap_offset.to_le_bytes());
    bytes[16..18].copy_from_slice(&entry.val_len.to_le_bytes());
    bytes[18..22].copy_from_slice(&entry.version.to_le_bytes());
    bytes[22..24].fill(0);
}

/// One worker's slice of the value heap: a bump allocator of fixed cells.
#[derive(Debug, Clone)]
pub struct BypassArena {
    base_cell: u64,
    capacity_cells: u64,
    next_cell: u64,
}

/// The exposed index: layout arithmetic shared by the server (local
/// maintenance) and clients (read planning). Immutable after creation;
/// mutable insert state lives in the per-worker [`BypassArena`]s.
#[derive(Debug)]
pub struct BypassIndex {
    pub index_region: RegionId,
    pub heap_region: RegionId,
    buckets: usize,
    partitions: usize,
    probe_depth: usize,
    cell_size: usize,
    arena_cells: u64,
}

impl BypassIndex {
    /// Register the index and heap regions on the server NIC, readable by
    /// every listed connection. The bucket array keeps occupancy around one
    /// third at `key_capacity` keys so probe chains stay short; the heap
    /// holds one cell per possible key with headroom for placement skew.
    pub fn create(
        emu: &mut Emulator,
        server_nic: NicId,
        readers: &[ConnectionId],
        key_capacity: u64,
        partitions: usize,
        probe_depth: usize,
        max_value: usize,
    ) -> Self {
        assert!(partitions >= 1 && probe_depth >= 1);
        let wanted = (key_capacity as usize * 3).max(partitions * 4);
        let buckets = wanted.div_ceil(partitions) * partitions;
        let cell_size = CELL_HEADER + max_value;
        let arena_cells = key_capacity.div_ceil(partitions as u64)
            + key_capacity / (4 * partitions as u64)
            + 64;
        let index_region = emu.register_region(server_nic, buckets * SLOT_BYTES, readers);
        let heap_region = emu.register_region(
            server_nic,
            arena_cells as usize * partitions * cell_size,
            readers,
        );
        BypassIndex {
            index_region,
            heap_region,
            buckets,
            partitions,
            probe_depth,
            cell_size,
            arena_cells,
        }
    }

    pub fn new_arena(&self, worker: usize) -> BypassArena {
        BypassArena {
            base_cell: worker as u64 * self.arena_cells,
            capacity_cells: self.arena_cells,
            next_cell: 0,
        }
    }

    pub fn probe_depth(&self) -> usize {
        self.probe_depth
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// The `i`-th bucket of a key's probe sequence. The stride keeps every
    /// candidate inside the owning worker's residue class.
    pub fn bucket_at(&self, key: &[u8], i: usize) -> usize {
        let h = hash64(PARTITION_SEED, key);
        let first = (h % self.buckets as u64) as usize;
        (first + i * self.partitions) % self.buckets
    }

    /// Lookup probe sequence, bounded by the configured depth.
    pub fn bucket_chain(&self, key: &[u8]) -> Vec<usize> {
        (0..self.probe_depth).map(|i| self.bucket_at(key, i)).collect()
    }

    pub fn slot_byte_offset(&self, bucket: usize) -> usize {
        bucket * SLOT_BYTES
    }

    /// `(offset, len)` of the heap read that validates and fetches a value.
    pub fn value_read_plan(&self, entry: &SlotEntry) -> (usize, usize) {
        (entry.heap_offset as usize, CELL_HEADER + entry.val_len as usize)
    }

    /// Version-check a value cell snapshot against the slot that pointed at
    /// it. `Ok` is the value bytes; `Err` means the entry changed between
    /// the two reads and the probe must be retried.
    pub fn check_value(entry: &SlotEntry, cell: &[u8]) -> Result<Vec<u8>, u32> {
        let cell_version = u32::from_le_bytes(cell[0..4].try_into().unwrap());
        if cell_version == entry.version {
            Ok(cell[CELL_HEADER..CELL_HEADER + entry.val_len as usize].to_vec())
        } else {
            Err(cell_version)
        }
    }

    /// Server-local insert-or-update. Inserts probe as far as the bucket
    /// class allows (lookups terminate early at empty slots, so placement
    /// beyond `probe_depth` is never needed for correctness of presence,
    /// only possible for lookup misses under adversarial occupancy). The
    /// value cell is written in place before the slot is restamped.
    pub fn upsert(
        &self,
        emu: &mut Emulator,
        worker: usize,
        arena: &mut BypassArena,
        key: &[u8],
        value: &[u8],
    ) -> Result<(), BypassError> {
        debug_assert_eq!(
            (hash64(PARTITION_SEED, key) % self.partitions as u64) as usize,
            worker,
            "EREW violation: index update from a non-owner worker"
        );
        if CELL_HEADER + value.len() > self.cell_size {
            return Err(BypassError::ValueTooLargeForCell {
                len: value.len(),
                cell: self.cell_size,
            });
        }
        let fp = fingerprint(key);
        let class_size = self.buckets / self.partitions;
        let mut target = None;
        for i in 0..class_size {
            let bucket = self.bucket_at(key, i);
            let off = self.slot_byte_offset(bucket);
            let entry = parse_slot(&emu.region(self.index_region)[off..off + SLOT_BYTES]);
            if entry.fingerprint == fp {
                target = Some((bucket, entry.heap_offset, entry.version + 1));
                break;
            }
            if entry.fingerprint == 0 {
                if arena.next_cell >= arena.capacity_cells {
                    return Err(BypassError::HeapFull { worker });
                }
                let cell = arena.base_cell + arena.next_cell;
                arena.next_cell += 1;
                target = Some((bucket, cell * self.cell_size as u64, 1));
                break;
            }
        }
        let (bucket, heap_offset, version) = target.ok_or(BypassError::IndexFull)?;

        let heap = emu.region_mut(self.heap_region);
        let cell = &mut heap[heap_offset as usize..heap_offset as usize + self.cell_size];
        cell[..CELL_HEADER].copy_from_slice(&version.to_le_bytes());
        cell[CELL_HEADER..CELL_HEADER + value.len()].copy_from_slice(value);

        let off = self.slot_byte_offset(bucket);
        write_slot(
            &mut emu.region_mut(self.index_region)[off..off + SLOT_BYTES],
            &SlotEntry {
                fingerprint: fp,
                heap_offset,
                val_len: value.len() as u16,
                version,
            },
        );
        Ok(())
    }
}
