//! Fixtures and independent reference models shared by the integration
//! tests. Nothing here calls into the simulator's internals: the oracles
//! are brute-force enumerations or plain set algebra.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use kedge::sim::{EventKind, TimelineEvent};
use kedge::{BasicBlock, BlockId, Cfg, Edge};
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CHAIN3: &str = include_str!("../fixtures/chain3.cfg");
pub const DIAMOND: &str = include_str!("../fixtures/diamond.cfg");
pub const FIG1: &str = include_str!("../fixtures/fig1.cfg");
pub const FIG2: &str = include_str!("../fixtures/fig2.cfg");
pub const FIG5: &str = include_str!("../fixtures/fig5.cfg");
pub const CHAIN10: &str = include_str!("../fixtures/chain10.cfg");

/// First seed for which the generator walks fig5.cfg as B0, B1, B0, B1, B3.
pub const FIG5_SEED: u64 = 4;

pub fn b(n: u32) -> BlockId {
    BlockId(n)
}

pub fn ids(v: &[u32]) -> Vec<BlockId> {
    v.iter().copied().map(BlockId).collect()
}

pub fn cfg(text: &str) -> Cfg {
    kedge::parse_cfg(text).expect("fixture parses")
}

/// Shortest walk length (>= 1) from the exit of `u` to every block reachable
/// in at most `k` edges, found by enumerating every walk.
pub fn brute_k_reach(cfg: &Cfg, u: BlockId, k: usize) -> BTreeMap<BlockId, usize> {
    fn go(cfg: &Cfg, at: BlockId, len: usize, k: usize, best: &mut BTreeMap<BlockId, usize>) {
        if len == k {
            return;
        }
        for (next, _) in cfg.successors(at).unwrap() {
            let d = best.entry(next).or_insert(len + 1);
            *d = (*d).min(len + 1);
            go(cfg, next, len + 1, k, best);
        }
    }
    let mut best = BTreeMap::new();
    go(cfg, u, 0, k, &mut best);
    best
}

/// Probability mass of walks leaving `u` that hit `target` within `k`
/// edges, by explicit enumeration. Walks stop at the first hit.
pub fn brute_hit_probability(cfg: &Cfg, u: BlockId, target: BlockId, k: usize) -> f64 {
    fn go(cfg: &Cfg, at: BlockId, target: BlockId, left: usize, mass: f64) -> f64 {
        if left == 0 {
            return 0.0;
        }
        cfg.successors(at)
            .unwrap()
            .into_iter()
            .map(|(next, p)| {
                if next == target {
                    mass * p
                } else {
                    go(cfg, next, target, left - 1, mass * p)
                }
            })
            .sum()
    }
    go(cfg, u, target, k, 1.0)
}

/// Every walk from the entry with between 1 and `max_len` blocks.
pub fn all_walks(cfg: &Cfg, max_len: usize) -> Vec<Vec<BlockId>> {
    let mut out = Vec::new();
    let mut stack = vec![vec![cfg.entry()]];
    while let Some(w) = stack.pop() {
        if w.len() < max_len {
            for (next, _) in cfg.successors(*w.last().unwrap()).unwrap() {
                let mut longer = w.clone();
                longer.push(next);
                stack.push(longer);
            }
        }
        out.push(w);
    }
    out
}

/// Reference resident sets under on-demand decompression without a cap:
/// after entering step i, exactly the blocks executed in the last `k` steps
/// are resident (all executed blocks when `k` is `None`).
pub fn window_resident_sets(steps: &[BlockId], k: Option<usize>) -> Vec<BTreeSet<BlockId>> {
    (0..steps.len())
        .map(|i| {
            let lo = match k {
                Some(k) => (i + 1).saturating_sub(k),
                None => 0,
            };
            steps[lo..=i].iter().copied().collect()
        })
        .collect()
}

/// Resident set at each ExecStart, rebuilt from DecompEnd / Delete / Evict
/// events alone.
pub fn resident_sets_from_timeline(timeline: &[TimelineEvent]) -> Vec<BTreeSet<BlockId>> {
    let mut live = BTreeSet::new();
    let mut out = Vec::new();
    for e in timeline {
        match e.kind {
            EventKind::DecompEnd => {
                live.insert(e.block);
            }
            EventKind::Delete | EventKind::Evict => {
                live.remove(&e.block);
            }
            EventKind::ExecStart => out.push(live.clone()),
            _ => {}
        }
    }
    out
}

/// Number of ExecStart events whose block is not live at that point.
pub fn executions_of_compressed(timeline: &[TimelineEvent]) -> usize {
    let mut live = BTreeSet::new();
    let mut bad = 0;
    for e in timeline {
        match e.kind {
            EventKind::DecompEnd => {
                live.insert(e.block);
            }
            EventKind::Delete | EventKind::Evict => {
                live.remove(&e.block);
            }
            EventKind::ExecStart if !live.contains(&e.block) => bad += 1,
            _ => {}
        }
    }
    bad
}

pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.0.next_u64() % n
    }

    pub fn range(&mut self, lo: u64, hi_inclusive: u64) -> u64 {
        lo + self.below(hi_inclusive - lo + 1)
    }

    pub fn coin(&mut self) -> bool {
        self.0.next_u64() & 1 == 1
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
}

/// A valid random CFG with `n` blocks, entry B0 and exit B(n-1). A random
/// spanning tree from the entry guarantees reachability; extra edges
/// (including back edges and self-loops) add cycles. Out-degree is at most
/// `max_out`.
pub fn random_cfg(rng: &mut SeededRng, n: usize, max_out: usize) -> Cfg {
    assert!(n >= 1 && max_out >= 1);
    let exit = n - 1;
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for j in 1..n {
        // parents must be non-exit blocks with spare out-degree
        let parents: Vec<usize> = (0..j)
            .filter(|&p| p != exit && succ[p].len() < max_out)
            .collect();
        let p = if parents.is_empty() {
            j - 1
        } else {
            parents[rng.below(parents.len() as u64) as usize]
        };
        succ[p].insert(j);
    }
    for (x, out) in succ.iter_mut().enumerate() {
        if x == exit {
            continue;
        }
        if out.is_empty() {
            out.insert(rng.below(n as u64) as usize);
        }
        while out.len() < max_out && rng.below(3) == 0 {
            out.insert(rng.below(n as u64) as usize);
        }
    }

    let blocks = (0..n)
        .map(|i| {
            let usize_ = rng.range(16, 256);
            BasicBlock {
                id: BlockId(i as u32),
                uncompressed_size: usize_,
                compressed_size: rng.range(1, usize_),
                exec_cycles: rng.range(1, 60),
            }
        })
        .collect();
    let mut edges = Vec::new();
    for (x, out) in succ.iter().enumerate() {
        let weights: Vec<u64> = out.iter().map(|_| rng.range(1, 10)).collect();
        let total: u64 = weights.iter().sum();
        let mut assigned = 0.0;
        for (i, (&dst, &w)) in out.iter().zip(&weights).enumerate() {
            let p = if i + 1 == out.len() {
                1.0 - assigned
            } else {
                w as f64 / total as f64
            };
            assigned += p;
            edges.push(Edge {
                src: BlockId(x as u32),
                dst: BlockId(dst as u32),
                prob: p,
            });
        }
    }
    let cfg = Cfg::new(blocks, edges, BlockId(0), BlockId(exit as u32)).unwrap();
    assert!(
        kedge::validate_cfg(&cfg).is_ok(),
        "{}",
        kedge::validate_cfg(&cfg)
    );
    cfg
}

pub fn kinds_and_blocks(timeline: &[TimelineEvent]) -> Vec<(EventKind, BlockId)> {
    timeline.iter().map(|e| (e.kind, e.block)).collect()
}
