//! Cycle-level replay of a trace under a compression policy.
//!
//! Three logical agents share one virtual clock:
//!
//! * the execution agent walks the trace, stalling whenever the next block
//!   is not resident;
//! * the decompression agent is a single server with a FIFO queue. Demand
//!   misses jump to the head and suspend a speculative job in progress,
//!   which later resumes with its remaining cycles;
//! * the compression agent deletes decompressed copies instantly and
//!   charges the work (plus branch un-patching) to `background_cycles`,
//!   which never delays execution.
//!
//! Everything runs on one thread, so a run is a deterministic function of
//! its inputs.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::cfg::{validate_cfg, BlockId, Cfg, ValidationReport};
use crate::memory::{BlockState, BranchSite, Eviction, MemoryError, MemoryState, RequestOutcome};
use crate::policy::{DecompMode, DecompressOrder, EdgeLimit, PolicyConfig, PolicyError};
use crate::trace::{validate_trace, Trace, TraceReport};

/// Cycle prices of the scheme's overheads. All default to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostModel {
    pub decomp_base: u64,
    /// Per compressed byte.
    pub decomp_per_byte: u64,
    /// Entering the demand-miss handler, separate from decompression itself.
    pub exception_cycles: u64,
    pub patch_cycles: u64,
    /// Background work per deleted copy.
    pub compress_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub total_cycles: u64,
    pub stall_cycles: u64,
    pub background_cycles: u64,
    pub demand_decompressions: u64,
    pub pre_decompressions: u64,
    pub demand_misses: u64,
    pub deletions: u64,
    pub evictions: u64,
    pub patches: u64,
    pub peak_footprint: u64,
    pub avg_footprint: f64,
    pub baseline_uncompressed_footprint: u64,
    pub baseline_cycles: u64,
}

impl Metrics {
    pub fn decompressions(&self) -> u64 {
        self.demand_decompressions + self.pre_decompressions
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    ExecStart,
    ExecEnd,
    DemandMiss,
    DecompStart,
    DecompEnd,
    Delete,
    Evict,
    Patch,
    PreRequest,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineEvent {
    pub cycle: u64,
    pub kind: EventKind,
    pub block: BlockId,
    pub footprint_after: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub metrics: Metrics,
    pub timeline: Vec<TimelineEvent>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid control flow graph:\n{0}")]
    InvalidCfg(ValidationReport),
    #[error("trace does not match the control flow graph:\n{0}")]
    TraceMismatch(TraceReport),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("k values must be >= 1")]
    InvalidSweep,
}

impl SimError {
    /// The configuration cannot be honoured under the memory cap.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            SimError::Memory(MemoryError::CapTooSmall { .. } | MemoryError::Infeasible { .. })
                | SimError::Policy(PolicyError::Memory(
                    MemoryError::CapTooSmall { .. } | MemoryError::Infeasible { .. }
                ))
        )
    }
}

pub fn timeline_csv(timeline: &[TimelineEvent]) -> String {
    let mut out = String::from("cycle,kind,block,footprint_after\n");
    for e in timeline {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            e.cycle, e.kind, e.block, e.footprint_after
        );
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Job {
    block: BlockId,
    demand: bool,
}

struct Engine<'a> {
    cfg: &'a Cfg,
    policy: &'a PolicyConfig,
    cost: &'a CostModel,
    mem: MemoryState,
    now: u64,
    active: Option<Job>,
    queue: VecDeque<Job>,
    started: BTreeSet<BlockId>,
    timeline: Vec<TimelineEvent>,
    m: Metrics,
    fp_current: u64,
    fp_since: u64,
    fp_area: u128,
}

/// Replays `trace` over `cfg` and returns the metrics and full timeline.
pub fn run(
    cfg: &Cfg,
    trace: &Trace,
    policy: &PolicyConfig,
    cost: &CostModel,
) -> Result<RunResult, SimError> {
    let report = validate_cfg(cfg);
    if !report.is_ok() {
        return Err(SimError::InvalidCfg(report));
    }
    let report = validate_trace(cfg, trace);
    if !report.is_ok() {
        return Err(SimError::TraceMismatch(report));
    }
    policy.validate()?;
    let mem = MemoryState::init_image(cfg, policy.cap)?;

    let mut engine = Engine::new(cfg, policy, cost, mem);
    engine.replay(&trace.steps)?;
    Ok(engine.finish(&trace.steps))
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a Cfg, policy: &'a PolicyConfig, cost: &'a CostModel, mem: MemoryState) -> Self {
        let fp = mem.footprint();
        Self {
            cfg,
            policy,
            cost,
            mem,
            now: 0,
            active: None,
            queue: VecDeque::new(),
            started: BTreeSet::new(),
            timeline: Vec::new(),
            m: Metrics {
                total_cycles: 0,
                stall_cycles: 0,
                background_cycles: 0,
                demand_decompressions: 0,
                pre_decompressions: 0,
                demand_misses: 0,
                deletions: 0,
                evictions: 0,
                patches: 0,
                peak_footprint: fp,
                avg_footprint: fp as f64,
                baseline_uncompressed_footprint: cfg.total_uncompressed_size(),
                baseline_cycles: 0,
            },
            fp_current: fp,
            fp_since: 0,
            fp_area: 0,
        }
    }

    fn emit(&mut self, cycle: u64, kind: EventKind, block: BlockId, footprint_after: u64) {
        self.timeline.push(TimelineEvent {
            cycle,
            kind,
            block,
            footprint_after,
        });
    }

    fn emit_now(&mut self, kind: EventKind, block: BlockId) {
        self.emit(self.now, kind, block, self.mem.footprint());
    }

    /// Folds the footprint held since the last change into the time
    /// integral. Call after every mutation that can change the footprint.
    fn footprint_changed(&mut self) {
        self.fp_area += u128::from(self.fp_current) * u128::from(self.now - self.fp_since);
        self.fp_since = self.now;
        self.fp_current = self.mem.footprint();
        self.m.peak_footprint = self.m.peak_footprint.max(self.fp_current);
    }

    fn replay(&mut self, steps: &[BlockId]) -> Result<(), SimError> {
        let Some(&entry) = steps.first() else {
            return Ok(());
        };
        let mut pending = self
            .policy
            .on_trace_start(self.cfg, &self.mem, entry)?
            .decompress_requests;
        self.mem.pin(Some(entry));

        for (i, &b) in steps.iter().enumerate() {
            self.arrive(b)?;

            if i > 0 {
                self.link_from(steps[i - 1], b)?;
            }
            self.policy.on_block_enter(&mut self.mem, b)?;
            self.mem.mark_exec_start(b)?;
            self.emit_now(EventKind::ExecStart, b);
            for order in std::mem::take(&mut pending) {
                self.issue(order)?;
            }

            let exec = self.cfg.block(b).map_err(PolicyError::from)?.exec_cycles;
            self.m.baseline_cycles += exec;
            self.advance_to(self.now + exec)?;
            self.emit_now(EventKind::ExecEnd, b);

            if let Some(&v) = steps.get(i + 1) {
                self.mem.pin(Some(v));
                let decision = self
                    .policy
                    .on_edge_traversal(self.cfg, &mut self.mem, b, v)?;
                for x in decision.blocks_to_delete {
                    let undone = self.mem.delete_resident(x)?;
                    self.m.deletions += 1;
                    self.footprint_changed();
                    self.emit_now(EventKind::Delete, x);
                    self.charge_removal(x, undone);
                }
                pending = decision.decompress_requests;
            }
        }
        Ok(())
    }

    /// Execution reaches `b`; returns once `b` is resident.
    fn arrive(&mut self, b: BlockId) -> Result<(), SimError> {
        match self.mem.state(b)? {
            BlockState::Resident => {}
            BlockState::InFlight { .. } => {
                let t0 = self.now;
                self.promote(b, false);
                self.wait_for(b)?;
                self.m.stall_cycles += self.now - t0;
            }
            BlockState::Compressed => {
                self.m.demand_misses += 1;
                self.emit_now(EventKind::DemandMiss, b);
                let decision = self.policy.demand_fault(&self.mem, b)?;
                self.advance_to(self.now + self.cost.exception_cycles)?;
                for order in decision.decompress_requests {
                    self.issue(order)?;
                }
                let t0 = self.now;
                self.wait_for(b)?;
                self.m.stall_cycles += self.now - t0;
            }
        }
        Ok(())
    }

    /// Patches the branch `u -> v` to jump into the decompressed copy of `v`.
    fn link_from(&mut self, u: BlockId, v: BlockId) -> Result<(), SimError> {
        if !self.mem.is_resident(u) {
            return Ok(());
        }
        let site_index = self
            .cfg
            .branch_ordinal(u, v)
            .expect("validated trace follows graph edges");
        let site = BranchSite {
            from_block: u,
            site_index,
        };
        if self.mem.link_branch(site, v)? > 0 {
            self.m.patches += 1;
            self.m.background_cycles += self.cost.patch_cycles;
            self.emit_now(EventKind::Patch, v);
        }
        Ok(())
    }

    /// Background cost of dropping the copy of `x` and undoing `undone`
    /// branch patches into it.
    fn charge_removal(&mut self, x: BlockId, undone: usize) {
        let undone = undone as u64;
        self.m.patches += undone;
        self.m.background_cycles += self.cost.compress_cycles + undone * self.cost.patch_cycles;
        for _ in 0..undone {
            self.emit_now(EventKind::Patch, x);
        }
    }

    fn issue(&mut self, order: DecompressOrder) -> Result<(), SimError> {
        let b = order.block;
        if !self.mem.is_compressed(b) {
            return Ok(());
        }
        if !order.demand && !self.mem.admits_speculative(b) {
            return Ok(());
        }
        let before = self.mem.footprint();
        let request = self.mem.request_decompress(b, self.cost, order.demand)?;
        if let RequestOutcome::Issued { evicted, .. } = request.outcome {
            self.record_evictions(before, &evicted)?;
        }
        self.footprint_changed();
        if order.demand {
            self.promote(b, true);
        } else {
            self.queue.push_back(Job {
                block: b,
                demand: false,
            });
            self.emit_now(EventKind::PreRequest, b);
        }
        Ok(())
    }

    fn record_evictions(
        &mut self,
        mut footprint: u64,
        evicted: &[Eviction],
    ) -> Result<(), SimError> {
        for e in evicted {
            footprint -= self
                .cfg
                .block(e.block)
                .map_err(PolicyError::from)?
                .uncompressed_size;
            self.m.evictions += 1;
            self.emit(self.now, EventKind::Evict, e.block, footprint);
            let undone = e.patches_undone as u64;
            self.m.patches += undone;
            self.m.background_cycles += self.cost.compress_cycles + undone * self.cost.patch_cycles;
            for _ in 0..undone {
                self.emit(self.now, EventKind::Patch, e.block, footprint);
            }
        }
        Ok(())
    }

    /// Moves the job for `b` to the server, suspending whatever speculative
    /// job was in progress.
    fn promote(&mut self, b: BlockId, demand: bool) {
        if matches!(self.active, Some(j) if j.block == b) {
            return;
        }
        let mut job = Job { block: b, demand };
        if let Some(pos) = self.queue.iter().position(|j| j.block == b) {
            job = self.queue.remove(pos).expect("position is in range");
        }
        if let Some(current) = self.active.take() {
            self.queue.push_front(current);
        }
        self.start_job(job, self.now);
    }

    fn start_job(&mut self, job: Job, at: u64) {
        self.active = Some(job);
        if self.started.insert(job.block) {
            let fp = self.mem.footprint();
            self.emit(at, EventKind::DecompStart, job.block, fp);
        }
    }

    fn finish_job(&mut self, at: u64) -> Result<(), SimError> {
        let job = self.active.take().expect("finishing an active job");
        self.mem.complete_decompress(job.block)?;
        self.started.remove(&job.block);
        if job.demand {
            self.m.demand_decompressions += 1;
        } else {
            self.m.pre_decompressions += 1;
        }
        let fp = self.mem.footprint();
        self.emit(at, EventKind::DecompEnd, job.block, fp);
        Ok(())
    }

    /// Runs the decompression server up to cycle `until` and moves the
    /// clock there.
    fn advance_to(&mut self, until: u64) -> Result<(), SimError> {
        let mut t = self.now;
        loop {
            if self.active.is_none() {
                match self.queue.pop_front() {
                    Some(job) => self.start_job(job, t),
                    None => break,
                }
            }
            let block = self.active.expect("job started above").block;
            let remaining = match self.mem.state(block)? {
                BlockState::InFlight { remaining } => remaining,
                _ => unreachable!("active job {block} is not in flight"),
            };
            if remaining == 0 {
                self.finish_job(t)?;
                continue;
            }
            if t >= until {
                break;
            }
            let step = remaining.min(until - t);
            self.mem.progress_decompress(block, step)?;
            t += step;
        }
        self.now = until;
        self.mem.set_clock(until);
        Ok(())
    }

    fn wait_for(&mut self, b: BlockId) -> Result<(), SimError> {
        while let BlockState::InFlight { remaining } = self.mem.state(b)? {
            debug_assert!(matches!(self.active, Some(j) if j.block == b));
            self.advance_to(self.now + remaining)?;
        }
        Ok(())
    }

    fn finish(mut self, steps: &[BlockId]) -> RunResult {
        debug_assert!(!steps.is_empty() || self.now == 0);
        self.footprint_changed();
        self.m.total_cycles = self.now;
        self.m.avg_footprint = if self.now == 0 {
            self.fp_current as f64
        } else {
            self.fp_area as f64 / self.now as f64
        };
        RunResult {
            metrics: self.m,
            timeline: self.timeline,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k_compress: EdgeLimit,
    pub decomp_mode: DecompMode,
    pub k_pre: u32,
    pub metrics: Metrics,
}

/// One run per `(mode, k_compress)` pair, modes outer, both in input order.
/// Other policy fields come from `template`.
pub fn sweep(
    cfg: &Cfg,
    trace: &Trace,
    template: &PolicyConfig,
    cost: &CostModel,
    k_values: &[EdgeLimit],
    modes: &[DecompMode],
) -> Result<Vec<SweepRow>, SimError> {
    if k_values.contains(&EdgeLimit::Finite(0)) {
        return Err(SimError::InvalidSweep);
    }
    let mut rows = Vec::with_capacity(k_values.len() * modes.len());
    for &mode in modes {
        for &k in k_values {
            let policy = PolicyConfig {
                k_compress: k,
                decomp_mode: mode,
                ..*template
            };
            let result = run(cfg, trace, &policy, cost)?;
            rows.push(SweepRow {
                k_compress: k,
                decomp_mode: mode,
                k_pre: policy.k_pre,
                metrics: result.metrics,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "k_compress,decomp_mode,k_pre,total_cycles,stall_cycles,background_cycles,\
         demand_decompressions,pre_decompressions,demand_misses,deletions,evictions,patches,\
         peak_footprint,avg_footprint,baseline_uncompressed_footprint,baseline_cycles\n",
    );
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.k_compress,
            r.decomp_mode,
            r.k_pre,
            m.total_cycles,
            m.stall_cycles,
            m.background_cycles,
            m.demand_decompressions,
            m.pre_decompressions,
            m.demand_misses,
            m.deletions,
            m.evictions,
            m.patches,
            m.peak_footprint,
            m.avg_footprint,
            m.baseline_uncompressed_footprint,
            m.baseline_cycles
        );
    }
    out
}
