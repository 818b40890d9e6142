//! The code memory image: a compressed area that never changes, plus a
//! decompressed area holding live copies of blocks.
//!
//! Space for a decompressed copy is reserved when the decompression is
//! requested, not when it completes, so a cap check happens once per request.
//! Deleting a copy frees its space immediately and undoes every branch patch
//! recorded in its remember set.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cfg::{BlockId, Cfg};
use crate::sim::CostModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockState {
    Compressed,
    InFlight { remaining: u64 },
    Resident,
}

/// A branch instruction inside a decompressed copy, identified by its source
/// block and its ordinal among that block's branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BranchSite {
    pub from_block: BlockId,
    pub site_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRuntimeState {
    pub state: BlockState,
    /// Edges traversed since this block last started executing.
    pub counter: u32,
    pub last_exec_start: Option<u64>,
    pub remember_set: BTreeSet<BranchSite>,
}

impl BlockRuntimeState {
    fn compressed() -> Self {
        Self {
            state: BlockState::Compressed,
            counter: 0,
            last_exec_start: None,
            remember_set: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Slot {
    uncompressed_size: u64,
    compressed_size: u64,
    rt: BlockRuntimeState,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("cap {cap} too small: block {block} needs a footprint of at least {needed}")]
    CapTooSmall {
        block: BlockId,
        needed: u64,
        cap: u64,
    },
    #[error(
        "cap {cap} infeasible: {needed} more bytes needed at footprint {footprint} and not enough evictable blocks"
    )]
    Infeasible {
        block: Option<BlockId>,
        needed: u64,
        footprint: u64,
        cap: u64,
    },
    #[error("block {0} is not resident")]
    NotResident(BlockId),
    #[error("block {0} is not being decompressed")]
    NotInFlight(BlockId),
    #[error("block {block} still has {remaining} decompression cycles left")]
    StillInFlight { block: BlockId, remaining: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub block: BlockId,
    pub patches_undone: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestOutcome {
    /// Block was already resident or in flight.
    NoOp,
    Issued {
        cycles: u64,
        evicted: Vec<Eviction>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompressRequest {
    pub block: BlockId,
    pub demand: bool,
    pub outcome: RequestOutcome,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryState {
    slots: BTreeMap<BlockId, Slot>,
    compressed_area_bytes: u64,
    decompressed_area_bytes: u64,
    max_uncompressed_size: u64,
    cap: Option<u64>,
    clock: u64,
    pinned: Option<BlockId>,
}

impl MemoryState {
    /// All blocks start compressed. A cap must leave room for the largest
    /// block to be decompressed on top of the compressed area.
    pub fn init_image(cfg: &Cfg, cap: Option<u64>) -> Result<Self, MemoryError> {
        let compressed_area_bytes = cfg.total_compressed_size();
        if let Some(cap) = cap {
            if let Some(big) = cfg
                .blocks()
                .iter()
                .max_by_key(|b| (b.uncompressed_size, std::cmp::Reverse(b.id)))
            {
                let needed = compressed_area_bytes + big.uncompressed_size;
                if needed > cap {
                    return Err(MemoryError::CapTooSmall {
                        block: big.id,
                        needed,
                        cap,
                    });
                }
            }
        }
        let slots = cfg
            .blocks()
            .iter()
            .map(|b| {
                (
                    b.id,
                    Slot {
                        uncompressed_size: b.uncompressed_size,
                        compressed_size: b.compressed_size,
                        rt: BlockRuntimeState::compressed(),
                    },
                )
            })
            .collect();
        Ok(Self {
            slots,
            compressed_area_bytes,
            decompressed_area_bytes: 0,
            max_uncompressed_size: cfg.max_uncompressed_size(),
            cap,
            clock: 0,
            pinned: None,
        })
    }

    pub fn footprint(&self) -> u64 {
        self.compressed_area_bytes + self.decompressed_area_bytes
    }

    pub fn compressed_area_bytes(&self) -> u64 {
        self.compressed_area_bytes
    }

    pub fn decompressed_area_bytes(&self) -> u64 {
        self.decompressed_area_bytes
    }

    pub fn cap(&self) -> Option<u64> {
        self.cap
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn set_clock(&mut self, cycle: u64) {
        debug_assert!(cycle >= self.clock);
        self.clock = cycle;
    }

    /// The block execution is in (or about to enter). Never evicted.
    pub fn pin(&mut self, block: Option<BlockId>) {
        self.pinned = block;
    }

    pub fn pinned(&self) -> Option<BlockId> {
        self.pinned
    }

    fn slot(&self, b: BlockId) -> Result<&Slot, MemoryError> {
        self.slots.get(&b).ok_or(MemoryError::UnknownBlock(b))
    }

    fn slot_mut(&mut self, b: BlockId) -> Result<&mut Slot, MemoryError> {
        self.slots.get_mut(&b).ok_or(MemoryError::UnknownBlock(b))
    }

    pub fn runtime(&self, b: BlockId) -> Result<&BlockRuntimeState, MemoryError> {
        self.slot(b).map(|s| &s.rt)
    }

    pub fn state(&self, b: BlockId) -> Result<BlockState, MemoryError> {
        self.slot(b).map(|s| s.rt.state)
    }

    pub fn is_resident(&self, b: BlockId) -> bool {
        matches!(self.state(b), Ok(BlockState::Resident))
    }

    pub fn is_compressed(&self, b: BlockId) -> bool {
        matches!(self.state(b), Ok(BlockState::Compressed))
    }

    pub fn counter(&self, b: BlockId) -> Result<u32, MemoryError> {
        self.slot(b).map(|s| s.rt.counter)
    }

    pub fn resident_blocks(&self) -> BTreeSet<BlockId> {
        self.blocks_where(|s| s == BlockState::Resident)
    }

    pub fn in_flight_blocks(&self) -> BTreeSet<BlockId> {
        self.blocks_where(|s| matches!(s, BlockState::InFlight { .. }))
    }

    fn blocks_where(&self, pred: impl Fn(BlockState) -> bool) -> BTreeSet<BlockId> {
        self.slots
            .iter()
            .filter(|(_, s)| pred(s.rt.state))
            .map(|(&id, _)| id)
            .collect()
    }

    fn in_flight_bytes(&self) -> u64 {
        self.slots
            .values()
            .filter(|s| matches!(s.rt.state, BlockState::InFlight { .. }))
            .map(|s| s.uncompressed_size)
            .sum()
    }

    /// Whether a speculative decompression of `b` can be admitted while
    /// keeping enough room for any later demand miss. Reservations of
    /// in-flight blocks cannot be evicted, so they count against the cap
    /// together with a worst-case demand block.
    pub fn admits_speculative(&self, b: BlockId) -> bool {
        let Some(cap) = self.cap else { return true };
        let Ok(slot) = self.slot(b) else { return false };
        self.compressed_area_bytes
            + self.in_flight_bytes()
            + slot.uncompressed_size
            + self.max_uncompressed_size
            <= cap
    }

    pub fn reset_counter(&mut self, b: BlockId) -> Result<(), MemoryError> {
        self.slot_mut(b)?.rt.counter = 0;
        Ok(())
    }

    pub fn increment_resident_counters(&mut self) {
        for s in self.slots.values_mut() {
            if s.rt.state == BlockState::Resident {
                s.rt.counter += 1;
            }
        }
    }

    /// Records that `b` started executing at the current clock.
    pub fn mark_exec_start(&mut self, b: BlockId) -> Result<(), MemoryError> {
        let clock = self.clock;
        let slot = self.slot_mut(b)?;
        if slot.rt.state != BlockState::Resident {
            return Err(MemoryError::NotResident(b));
        }
        slot.rt.last_exec_start = Some(clock);
        Ok(())
    }

    pub fn decompression_cycles(&self, b: BlockId, cost: &CostModel) -> Result<u64, MemoryError> {
        let slot = self.slot(b)?;
        Ok(cost.decomp_base + cost.decomp_per_byte * slot.compressed_size)
    }

    /// Starts decompressing `b`. Requests for blocks that are not compressed
    /// are reported as no-ops. With a cap, least recently used resident
    /// copies are evicted first to make room.
    pub fn request_decompress(
        &mut self,
        b: BlockId,
        cost: &CostModel,
        demand: bool,
    ) -> Result<DecompressRequest, MemoryError> {
        if self.state(b)? != BlockState::Compressed {
            return Ok(DecompressRequest {
                block: b,
                demand,
                outcome: RequestOutcome::NoOp,
            });
        }
        let cycles = self.decompression_cycles(b, cost)?;
        let needed = self.slot(b)?.uncompressed_size;
        let protected: BTreeSet<BlockId> = self.pinned.into_iter().chain([b]).collect();
        let evicted = self.evict(needed, &protected, Some(b))?;

        let slot = self.slot_mut(b)?;
        slot.rt.state = BlockState::InFlight { remaining: cycles };
        slot.rt.counter = 0;
        self.decompressed_area_bytes += needed;

        Ok(DecompressRequest {
            block: b,
            demand,
            outcome: RequestOutcome::Issued { cycles, evicted },
        })
    }

    /// Spends up to `cycles` of decompression work on `b`; returns the
    /// cycles still remaining.
    pub fn progress_decompress(&mut self, b: BlockId, cycles: u64) -> Result<u64, MemoryError> {
        let slot = self.slot_mut(b)?;
        match &mut slot.rt.state {
            BlockState::InFlight { remaining } => {
                *remaining = remaining.saturating_sub(cycles);
                Ok(*remaining)
            }
            _ => Err(MemoryError::NotInFlight(b)),
        }
    }

    pub fn complete_decompress(&mut self, b: BlockId) -> Result<(), MemoryError> {
        let slot = self.slot_mut(b)?;
        match slot.rt.state {
            BlockState::InFlight { remaining: 0 } => {
                slot.rt.state = BlockState::Resident;
                slot.rt.counter = 0;
                Ok(())
            }
            BlockState::InFlight { remaining } => Err(MemoryError::StillInFlight {
                block: b,
                remaining,
            }),
            _ => Err(MemoryError::NotInFlight(b)),
        }
    }

    /// Records that the branch at `site` now jumps straight into the
    /// decompressed copy of `target`. Returns 1 for a new patch, 0 if the
    /// site was already linked.
    pub fn link_branch(&mut self, site: BranchSite, target: BlockId) -> Result<u32, MemoryError> {
        let slot = self.slot_mut(target)?;
        if slot.rt.state != BlockState::Resident {
            return Err(MemoryError::NotResident(target));
        }
        Ok(u32::from(slot.rt.remember_set.insert(site)))
    }

    /// Drops the decompressed copy of `b`. Returns how many branch patches
    /// pointing into it had to be undone.
    pub fn delete_resident(&mut self, b: BlockId) -> Result<usize, MemoryError> {
        let slot = self.slot_mut(b)?;
        if slot.rt.state != BlockState::Resident {
            return Err(MemoryError::NotResident(b));
        }
        let undone = slot.rt.remember_set.len();
        slot.rt = BlockRuntimeState {
            last_exec_start: slot.rt.last_exec_start,
            ..BlockRuntimeState::compressed()
        };
        let freed = slot.uncompressed_size;
        self.decompressed_area_bytes -= freed;
        // branches inside b's copy disappear with it
        for other in self.slots.values_mut() {
            other.rt.remember_set.retain(|site| site.from_block != b);
        }
        Ok(undone)
    }

    /// Evicts least recently started resident blocks (never-executed ones
    /// first, ties by id) until `needed` more bytes fit under the cap.
    pub fn evict_for(
        &mut self,
        needed: u64,
        protected: &BTreeSet<BlockId>,
    ) -> Result<Vec<Eviction>, MemoryError> {
        let mut protected = protected.clone();
        protected.extend(self.pinned);
        self.evict(needed, &protected, None)
    }

    fn evict(
        &mut self,
        needed: u64,
        protected: &BTreeSet<BlockId>,
        for_block: Option<BlockId>,
    ) -> Result<Vec<Eviction>, MemoryError> {
        let Some(cap) = self.cap else {
            return Ok(Vec::new());
        };
        let mut candidates: Vec<(Option<u64>, BlockId, u64)> = self
            .slots
            .iter()
            .filter(|(id, s)| s.rt.state == BlockState::Resident && !protected.contains(id))
            .map(|(&id, s)| (s.rt.last_exec_start, id, s.uncompressed_size))
            .collect();
        let evictable: u64 = candidates.iter().map(|c| c.2).sum();
        if self.footprint() + needed > cap + evictable {
            return Err(MemoryError::Infeasible {
                block: for_block,
                needed,
                footprint: self.footprint(),
                cap,
            });
        }
        candidates.sort();

        let mut evicted = Vec::new();
        for (_, id, _) in candidates {
            if self.footprint() + needed <= cap {
                break;
            }
            let patches_undone = self.delete_resident(id)?;
            evicted.push(Eviction {
                block: id,
                patches_undone,
            });
        }
        Ok(evicted)
    }
}
