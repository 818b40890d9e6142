//! Control flow graphs of basic blocks with probabilistic edges.
//!
//! A [`Cfg`] is immutable once built. Parsing only checks that the file is
//! structurally usable (known ids, single entry/exit); [`validate_cfg`]
//! reports every semantic violation at once.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Tolerance on the sum of a block's out-edge probabilities.
pub const PROB_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub u32);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{}", self.0)
    }
}

impl FromStr for BlockId {
    type Err = String;

    /// Accepts `B7`, `b7` or a bare `7`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix(['B', 'b']).unwrap_or(s);
        if digits.is_empty() || !digits.bytes().all(|c| c.is_ascii_digit()) {
            return Err(format!("invalid block id `{s}`"));
        }
        digits
            .parse::<u32>()
            .map(BlockId)
            .map_err(|_| format!("block id `{s}` out of range"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub uncompressed_size: u64,
    pub compressed_size: u64,
    pub exec_cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: BlockId,
    pub dst: BlockId,
    pub prob: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum CfgError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate block id {0}")]
    DuplicateBlock(BlockId),
    #[error("edge {src} -> {dst} references unknown block {missing}")]
    UnknownEdgeBlock {
        src: BlockId,
        dst: BlockId,
        missing: BlockId,
    },
    #[error("{role} block {id} is not defined")]
    UnknownRoleBlock { role: &'static str, id: BlockId },
    #[error("missing `{0}` declaration")]
    MissingRole(&'static str),
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
}

/// A control flow graph. Blocks are kept sorted by id; successor lists are
/// sorted by destination id.
#[derive(Debug, Clone)]
pub struct Cfg {
    blocks: Vec<BasicBlock>,
    index: HashMap<BlockId, usize>,
    edges: Vec<Edge>,
    succ: Vec<Vec<(usize, f64)>>,
    entry: BlockId,
    exit: BlockId,
}

impl Cfg {
    /// Builds a graph from its parts, checking only referential integrity.
    pub fn new(
        blocks: Vec<BasicBlock>,
        edges: Vec<Edge>,
        entry: BlockId,
        exit: BlockId,
    ) -> Result<Self, CfgError> {
        let mut blocks = blocks;
        blocks.sort_by_key(|b| b.id);
        if let Some(w) = blocks.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(CfgError::DuplicateBlock(w[0].id));
        }
        let index: HashMap<BlockId, usize> =
            blocks.iter().enumerate().map(|(i, b)| (b.id, i)).collect();

        for (role, id) in [("entry", entry), ("exit", exit)] {
            if !index.contains_key(&id) {
                return Err(CfgError::UnknownRoleBlock { role, id });
            }
        }

        let mut succ = vec![Vec::new(); blocks.len()];
        for e in &edges {
            let missing = [e.src, e.dst]
                .into_iter()
                .find(|id| !index.contains_key(id));
            if let Some(missing) = missing {
                return Err(CfgError::UnknownEdgeBlock {
                    src: e.src,
                    dst: e.dst,
                    missing,
                });
            }
            succ[index[&e.src]].push((index[&e.dst], e.prob));
        }
        for list in &mut succ {
            list.sort_by_key(|&(dst, _)| dst);
        }

        Ok(Self {
            blocks,
            index,
            edges,
            succ,
            entry,
            exit,
        })
    }

    pub fn entry(&self) -> BlockId {
        self.entry
    }

    pub fn exit(&self) -> BlockId {
        self.exit
    }

    pub fn blocks(&self) -> &[BasicBlock] {
        &self.blocks
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn block(&self, id: BlockId) -> Result<&BasicBlock, CfgError> {
        self.index
            .get(&id)
            .map(|&i| &self.blocks[i])
            .ok_or(CfgError::UnknownBlock(id))
    }

    fn idx(&self, id: BlockId) -> Result<usize, CfgError> {
        self.index
            .get(&id)
            .copied()
            .ok_or(CfgError::UnknownBlock(id))
    }

    /// Out-edges of `id` as `(dst, prob)`, sorted by destination id.
    pub fn successors(&self, id: BlockId) -> Result<Vec<(BlockId, f64)>, CfgError> {
        let i = self.idx(id)?;
        Ok(self.succ[i]
            .iter()
            .map(|&(j, p)| (self.blocks[j].id, p))
            .collect())
    }

    pub fn has_edge(&self, src: BlockId, dst: BlockId) -> bool {
        match (self.index.get(&src), self.index.get(&dst)) {
            (Some(&s), Some(&d)) => self.succ[s].iter().any(|&(j, _)| j == d),
            _ => false,
        }
    }

    /// Ordinal of the `src -> dst` branch among `src`'s out-edges sorted by
    /// destination.
    pub fn branch_ordinal(&self, src: BlockId, dst: BlockId) -> Option<usize> {
        let s = *self.index.get(&src)?;
        let d = *self.index.get(&dst)?;
        self.succ[s].iter().position(|&(j, _)| j == d)
    }

    pub fn total_compressed_size(&self) -> u64 {
        self.blocks.iter().map(|b| b.compressed_size).sum()
    }

    pub fn total_uncompressed_size(&self) -> u64 {
        self.blocks.iter().map(|b| b.uncompressed_size).sum()
    }

    pub fn max_uncompressed_size(&self) -> u64 {
        self.blocks
            .iter()
            .map(|b| b.uncompressed_size)
            .max()
            .unwrap_or(0)
    }

    /// Blocks whose shortest edge distance from the exit of `u` is in
    /// `1..=k`, sorted by `(distance, id)`. `u` itself appears only when it
    /// sits on a cycle of length at most `k`.
    pub fn k_reach(&self, u: BlockId, k: usize) -> Result<Vec<(BlockId, usize)>, CfgError> {
        let start = self.idx(u)?;
        let mut dist: Vec<Option<usize>> = vec![None; self.blocks.len()];
        let mut queue = VecDeque::new();
        if k > 0 {
            for &(j, _) in &self.succ[start] {
                if dist[j].is_none() {
                    dist[j] = Some(1);
                    queue.push_back(j);
                }
            }
        }
        while let Some(x) = queue.pop_front() {
            let d = dist[x].unwrap_or(0);
            if d == k {
                continue;
            }
            for &(j, _) in &self.succ[x] {
                if dist[j].is_none() {
                    dist[j] = Some(d + 1);
                    queue.push_back(j);
                }
            }
        }
        let mut out: Vec<(BlockId, usize)> = dist
            .iter()
            .enumerate()
            .filter_map(|(i, d)| d.map(|d| (self.blocks[i].id, d)))
            .collect();
        out.sort_by_key(|&(id, d)| (d, id));
        Ok(out)
    }

    /// Probability that a walk leaving `u` through one of its out-edges
    /// first reaches `target` within `k` edges. The walk is absorbed on
    /// reaching `target`.
    pub fn hit_probability(&self, u: BlockId, target: BlockId, k: usize) -> Result<f64, CfgError> {
        let start = self.idx(u)?;
        let t = self.idx(target)?;
        if k == 0 {
            return Ok(0.0);
        }
        let n = self.blocks.len();
        // h[x] = P(hit target within j steps | currently at x)
        let mut h: Vec<f64> = (0..n).map(|x| if x == t { 1.0 } else { 0.0 }).collect();
        let mut next = vec![0.0; n];
        for _ in 1..k {
            for (x, slot) in next.iter_mut().enumerate() {
                *slot = if x == t {
                    1.0
                } else {
                    self.succ[x].iter().map(|&(j, p)| p * h[j]).sum()
                };
            }
            std::mem::swap(&mut h, &mut next);
        }
        Ok(self.succ[start].iter().map(|&(j, p)| p * h[j]).sum())
    }

    /// Blocks reachable from the entry block (including it).
    fn reachable_from_entry(&self) -> Vec<bool> {
        let mut seen = vec![false; self.blocks.len()];
        let mut stack = vec![self.index[&self.entry]];
        seen[stack[0]] = true;
        while let Some(x) = stack.pop() {
            for &(j, _) in &self.succ[x] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    ZeroQuantity {
        block: BlockId,
        field: &'static str,
    },
    Expanding {
        block: BlockId,
        compressed: u64,
        uncompressed: u64,
    },
    ProbabilityRange {
        src: BlockId,
        dst: BlockId,
        prob: f64,
    },
    ProbabilitySum {
        block: BlockId,
        sum: f64,
    },
    ParallelEdge {
        src: BlockId,
        dst: BlockId,
    },
    ExitHasSuccessors {
        block: BlockId,
    },
    NoSuccessors {
        block: BlockId,
    },
    EntryIsExit {
        block: BlockId,
    },
    Unreachable {
        block: BlockId,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ZeroQuantity { block, field } => {
                write!(f, "block {block}: {field} must be > 0")
            }
            Violation::Expanding {
                block,
                compressed,
                uncompressed,
            } => write!(
                f,
                "block {block}: compressed size {compressed} exceeds uncompressed size {uncompressed}"
            ),
            Violation::ProbabilityRange { src, dst, prob } => {
                write!(f, "edge {src} -> {dst}: probability {prob} not in (0, 1]")
            }
            Violation::ProbabilitySum { block, sum } => write!(
                f,
                "block {block}: out-edge probabilities sum to {} ≠ 1",
                round_for_display(*sum)
            ),
            Violation::ParallelEdge { src, dst } => {
                write!(f, "parallel edges {src} -> {dst}")
            }
            Violation::ExitHasSuccessors { block } => {
                write!(f, "exit block {block} has out-edges")
            }
            Violation::NoSuccessors { block } => {
                write!(f, "block {block} is not the exit but has no out-edges")
            }
            Violation::EntryIsExit { block } => {
                write!(f, "block {block} is both entry and exit of a multi-block graph")
            }
            Violation::Unreachable { block } => {
                write!(f, "block {block} is unreachable from the entry")
            }
        }
    }
}

fn round_for_display(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return writeln!(f, "ok");
        }
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every structural invariant and lists all violations.
pub fn validate_cfg(cfg: &Cfg) -> ValidationReport {
    let mut violations = Vec::new();

    for b in &cfg.blocks {
        for (field, value) in [
            ("uncompressed_size", b.uncompressed_size),
            ("compressed_size", b.compressed_size),
            ("exec_cycles", b.exec_cycles),
        ] {
            if value == 0 {
                violations.push(Violation::ZeroQuantity { block: b.id, field });
            }
        }
        if b.compressed_size > b.uncompressed_size {
            violations.push(Violation::Expanding {
                block: b.id,
                compressed: b.compressed_size,
                uncompressed: b.uncompressed_size,
            });
        }
    }

    if cfg.entry == cfg.exit && cfg.blocks.len() > 1 {
        violations.push(Violation::EntryIsExit { block: cfg.entry });
    }

    let mut seen_pairs = BTreeMap::new();
    for e in &cfg.edges {
        if !(e.prob > 0.0 && e.prob <= 1.0) {
            violations.push(Violation::ProbabilityRange {
                src: e.src,
                dst: e.dst,
                prob: e.prob,
            });
        }
        let count = seen_pairs.entry((e.src, e.dst)).or_insert(0usize);
        *count += 1;
        if *count == 2 {
            violations.push(Violation::ParallelEdge {
                src: e.src,
                dst: e.dst,
            });
        }
    }

    for (i, b) in cfg.blocks.iter().enumerate() {
        let out = &cfg.succ[i];
        if b.id == cfg.exit {
            if !out.is_empty() {
                violations.push(Violation::ExitHasSuccessors { block: b.id });
            }
            continue;
        }
        if out.is_empty() {
            violations.push(Violation::NoSuccessors { block: b.id });
            continue;
        }
        let sum: f64 = out.iter().map(|&(_, p)| p).sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            violations.push(Violation::ProbabilitySum { block: b.id, sum });
        }
    }

    let reachable = cfg.reachable_from_entry();
    for (i, b) in cfg.blocks.iter().enumerate() {
        if !reachable[i] {
            violations.push(Violation::Unreachable { block: b.id });
        }
    }

    ValidationReport { violations }
}

/// Parses the line-oriented CFG format:
///
/// ```text
/// # comment
/// uniform                                # optional: p= may be omitted
/// block B0 usize=100 csize=60 cycles=20
/// edge B0 -> B1 p=0.5
/// entry B0
/// exit B1
/// ```
pub fn parse_cfg(text: &str) -> Result<Cfg, CfgError> {
    let mut blocks = Vec::new();
    let mut raw_edges: Vec<(BlockId, BlockId, Option<f64>)> = Vec::new();
    let mut entry = None;
    let mut exit = None;
    let mut uniform = false;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let syntax = |msg: String| CfgError::Syntax { line: line_no, msg };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens[0] {
            "uniform" if tokens.len() == 1 => uniform = true,
            "block" => {
                if tokens.len() != 5 {
                    return Err(syntax(
                        "expected `block <id> usize=<n> csize=<n> cycles=<n>`".into(),
                    ));
                }
                let id = tokens[1].parse::<BlockId>().map_err(syntax)?;
                let usize_ = keyed_u64(tokens[2], "usize").map_err(syntax)?;
                let csize = keyed_u64(tokens[3], "csize").map_err(syntax)?;
                let cycles = keyed_u64(tokens[4], "cycles").map_err(syntax)?;
                if blocks.iter().any(|b: &BasicBlock| b.id == id) {
                    return Err(CfgError::DuplicateBlock(id));
                }
                blocks.push(BasicBlock {
                    id,
                    uncompressed_size: usize_,
                    compressed_size: csize,
                    exec_cycles: cycles,
                });
            }
            "edge" => {
                let (src, dst, p) = match tokens.as_slice() {
                    [_, s, "->", d] => (s, d, None),
                    [_, s, "->", d, p] => (s, d, Some(*p)),
                    _ => return Err(syntax("expected `edge <src> -> <dst> p=<prob>`".into())),
                };
                let src = src.parse::<BlockId>().map_err(syntax)?;
                let dst = dst.parse::<BlockId>().map_err(syntax)?;
                let prob = match p {
                    Some(p) => Some(keyed_f64(p, "p").map_err(syntax)?),
                    None if uniform => None,
                    None => {
                        return Err(syntax(
                            "edge probability `p=` required (or declare `uniform`)".into(),
                        ))
                    }
                };
                raw_edges.push((src, dst, prob));
            }
            "entry" | "exit" if tokens.len() == 2 => {
                let id = tokens[1].parse::<BlockId>().map_err(syntax)?;
                let slot = if tokens[0] == "entry" {
                    &mut entry
                } else {
                    &mut exit
                };
                if slot.replace(id).is_some() {
                    return Err(syntax(format!("`{}` declared more than once", tokens[0])));
                }
            }
            other => return Err(syntax(format!("unrecognized directive `{other}`"))),
        }
    }

    let mut out_degree: HashMap<BlockId, usize> = HashMap::new();
    for (src, _, _) in &raw_edges {
        *out_degree.entry(*src).or_default() += 1;
    }
    let edges = raw_edges
        .into_iter()
        .map(|(src, dst, p)| Edge {
            src,
            dst,
            prob: p.unwrap_or_else(|| 1.0 / out_degree[&src] as f64),
        })
        .collect();

    let entry = entry.ok_or(CfgError::MissingRole("entry"))?;
    let exit = exit.ok_or(CfgError::MissingRole("exit"))?;
    Cfg::new(blocks, edges, entry, exit)
}

fn keyed<'a>(token: &'a str, key: &str) -> Result<&'a str, String> {
    token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| format!("expected `{key}=<value>`, found `{token}`"))
}

fn keyed_u64(token: &str, key: &str) -> Result<u64, String> {
    let v = keyed(token, key)?;
    v.parse()
        .map_err(|_| format!("`{key}` must be a non-negative integer, found `{v}`"))
}

fn keyed_f64(token: &str, key: &str) -> Result<f64, String> {
    let v = keyed(token, key)?;
    v.parse::<f64>()
        .ok()
        .filter(|p| p.is_finite())
        .ok_or_else(|| format!("`{key}` must be a decimal number, found `{v}`"))
}

/// Canonical text form: blocks by id, then edges by `(src, dst)`, then the
/// entry and exit declarations.
pub fn serialize_cfg(cfg: &Cfg) -> String {
    let mut out = String::new();
    for b in &cfg.blocks {
        out.push_str(&format!(
            "block {} usize={} csize={} cycles={}\n",
            b.id, b.uncompressed_size, b.compressed_size, b.exec_cycles
        ));
    }
    let mut edges = cfg.edges.clone();
    edges.sort_by_key(|e| (e.src, e.dst));
    for e in &edges {
        // `{}` on f64 prints the shortest string that parses back exactly.
        out.push_str(&format!("edge {} -> {} p={}\n", e.src, e.dst, e.prob));
    }
    out.push_str(&format!("entry {}\nexit {}\n", cfg.entry, cfg.exit));
    out
}
