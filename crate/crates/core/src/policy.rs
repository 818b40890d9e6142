//! Compression and decompression decision rules.
//!
//! Compression is the k-edge rule: every resident block's counter is bumped
//! on each branch and the copy is deleted once the counter reaches
//! `k_compress`. Decompression is either on demand, or speculative over the
//! blocks within `k_pre` edges of the block execution is processing
//! (all of them, or only the most likely one).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cfg::{BlockId, Cfg, CfgError};
use crate::memory::{MemoryError, MemoryState};

/// The `k` of the k-edge compression rule. `Infinite` never deletes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeLimit {
    Finite(u32),
    Infinite,
}

impl fmt::Display for EdgeLimit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeLimit::Finite(k) => write!(f, "{k}"),
            EdgeLimit::Infinite => write!(f, "inf"),
        }
    }
}

impl FromStr for EdgeLimit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(EdgeLimit::Infinite),
            t => match t.parse::<u32>() {
                Ok(k) if k >= 1 => Ok(EdgeLimit::Finite(k)),
                _ => Err(format!(
                    "k must be a positive integer or `inf`, found `{s}`"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecompMode {
    OnDemand,
    PreAll,
    PreSingle,
}

impl DecompMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecompMode::OnDemand => "on-demand",
            DecompMode::PreAll => "pre-all",
            DecompMode::PreSingle => "pre-single",
        }
    }
}

impl fmt::Display for DecompMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecompMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "on-demand" => Ok(DecompMode::OnDemand),
            "pre-all" => Ok(DecompMode::PreAll),
            "pre-single" => Ok(DecompMode::PreSingle),
            _ => Err(format!(
                "unknown mode `{s}` (expected on-demand, pre-all or pre-single)"
            )),
        }
    }
}

/// How pre-decompress-single picks its block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Predictor {
    /// Highest probability of being reached within `k_pre` edges.
    #[default]
    HitProbability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyConfig {
    pub k_compress: EdgeLimit,
    pub decomp_mode: DecompMode,
    pub k_pre: u32,
    pub predictor: Predictor,
    pub cap: Option<u64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            k_compress: EdgeLimit::Finite(2),
            decomp_mode: DecompMode::OnDemand,
            k_pre: 1,
            predictor: Predictor::HitProbability,
            cap: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy: {0}")]
    InvalidConfig(String),
    #[error("no edge {0} -> {1}")]
    NoSuchEdge(BlockId, BlockId),
    #[error(transparent)]
    Cfg(#[from] CfgError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecompressOrder {
    pub block: BlockId,
    pub demand: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyDecision {
    pub blocks_to_delete: Vec<BlockId>,
    pub decompress_requests: Vec<DecompressOrder>,
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.k_compress == EdgeLimit::Finite(0) {
            return Err(PolicyError::InvalidConfig("k_compress must be >= 1".into()));
        }
        if self.decomp_mode != DecompMode::OnDemand && self.k_pre == 0 {
            return Err(PolicyError::InvalidConfig(format!(
                "k_pre must be >= 1 for {}",
                self.decomp_mode
            )));
        }
        Ok(())
    }

    /// Execution begins in `b`: its staleness counter restarts.
    pub fn on_block_enter(&self, mem: &mut MemoryState, b: BlockId) -> Result<(), PolicyError> {
        mem.reset_counter(b)?;
        Ok(())
    }

    /// Decision taken when execution enters the entry block.
    pub fn on_trace_start(
        &self,
        cfg: &Cfg,
        mem: &MemoryState,
        entry: BlockId,
    ) -> Result<PolicyDecision, PolicyError> {
        Ok(PolicyDecision {
            blocks_to_delete: Vec::new(),
            decompress_requests: self.lookahead(cfg, mem, entry)?,
        })
    }

    /// Called once per branch `u -> v`, when `u` finishes. Bumps every
    /// resident counter, selects the copies whose counter reached
    /// `k_compress` (never `v`), and the speculative requests for the
    /// lookahead window of `v`.
    pub fn on_edge_traversal(
        &self,
        cfg: &Cfg,
        mem: &mut MemoryState,
        u: BlockId,
        v: BlockId,
    ) -> Result<PolicyDecision, PolicyError> {
        if !cfg.has_edge(u, v) {
            return Err(PolicyError::NoSuchEdge(u, v));
        }
        mem.increment_resident_counters();

        let mut blocks_to_delete = Vec::new();
        if let EdgeLimit::Finite(k) = self.k_compress {
            for id in mem.resident_blocks() {
                if id != v && mem.counter(id)? >= k {
                    blocks_to_delete.push(id);
                }
            }
        }

        let decompress_requests = self.lookahead(cfg, mem, v)?;
        Ok(PolicyDecision {
            blocks_to_delete,
            decompress_requests,
        })
    }

    /// Speculative decompression requests for the blocks at most `k_pre`
    /// edges past the exit of `from`. Only compressed blocks qualify.
    pub fn lookahead(
        &self,
        cfg: &Cfg,
        mem: &MemoryState,
        from: BlockId,
    ) -> Result<Vec<DecompressOrder>, PolicyError> {
        let k = self.k_pre as usize;
        let speculative = |block| DecompressOrder {
            block,
            demand: false,
        };
        match self.decomp_mode {
            DecompMode::OnDemand => Ok(Vec::new()),
            DecompMode::PreAll => Ok(cfg
                .k_reach(from, k)?
                .into_iter()
                .filter(|&(id, _)| mem.is_compressed(id))
                .map(|(id, _)| speculative(id))
                .collect()),
            DecompMode::PreSingle => {
                let mut best: Option<(f64, BlockId)> = None;
                for (id, _) in cfg.k_reach(from, k)? {
                    if !mem.is_compressed(id) {
                        continue;
                    }
                    let p = match self.predictor {
                        Predictor::HitProbability => cfg.hit_probability(from, id, k)?,
                    };
                    let better = match best {
                        None => true,
                        Some((bp, bid)) => p > bp || (p == bp && id < bid),
                    };
                    if better {
                        best = Some((p, id));
                    }
                }
                Ok(best.map(|(_, id)| speculative(id)).into_iter().collect())
            }
        }
    }

    /// Execution reached a compressed block: the exception path always
    /// requests it, whatever the mode.
    pub fn demand_fault(
        &self,
        mem: &MemoryState,
        b: BlockId,
    ) -> Result<PolicyDecision, PolicyError> {
        mem.state(b)?;
        Ok(PolicyDecision {
            blocks_to_delete: Vec::new(),
            decompress_requests: vec![DecompressOrder {
                block: b,
                demand: true,
            }],
        })
    }
}
