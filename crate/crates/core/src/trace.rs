//! Basic-block access traces: replayed from a file or generated by a seeded
//! random walk over a [`Cfg`].
//!
//! The generator is ChaCha8 seeded through `seed_from_u64`. Each step draws
//! one `u64`, maps it to a uniform `f64` in `[0, 1)` from its top 53 bits, and
//! picks the first out-edge (sorted by destination id) whose cumulative
//! probability exceeds the draw. The stream is value-stable across platforms.

use std::fmt;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cfg::{validate_cfg, BlockId, Cfg, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceSource {
    Replayed,
    Generated { seed: u64, max_steps: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub steps: Vec<BlockId>,
    pub source: TraceSource,
}

impl Trace {
    pub fn replayed(steps: Vec<BlockId>) -> Self {
        Self {
            steps,
            source: TraceSource::Replayed,
        }
    }

    /// True when the walk stopped before reaching the exit block.
    pub fn is_truncated(&self, cfg: &Cfg) -> bool {
        self.steps.last() != Some(&cfg.exit())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("invalid control flow graph:\n{0}")]
    InvalidCfg(ValidationReport),
    #[error("max_steps must be positive")]
    ZeroSteps,
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

/// Random walk from the entry block; stops at the exit or after
/// `max_steps` blocks.
pub fn generate_trace(cfg: &Cfg, seed: u64, max_steps: usize) -> Result<Trace, TraceError> {
    let report = validate_cfg(cfg);
    if !report.is_ok() {
        return Err(TraceError::InvalidCfg(report));
    }
    if max_steps == 0 {
        return Err(TraceError::ZeroSteps);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = cfg.entry();
    let mut steps = vec![current];
    while current != cfg.exit() && steps.len() < max_steps {
        let out = cfg
            .successors(current)
            .expect("validated graph contains every walked block");
        let draw = unit_f64(rng.next_u64());
        let mut cumulative = 0.0;
        let mut next = out
            .last()
            .map(|&(dst, _)| dst)
            .expect("non-exit block has successors");
        for &(dst, p) in &out {
            cumulative += p;
            if draw < cumulative {
                next = dst;
                break;
            }
        }
        steps.push(next);
        current = next;
    }

    Ok(Trace {
        steps,
        source: TraceSource::Generated { seed, max_steps },
    })
}

fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceViolation {
    Empty,
    NotAtEntry {
        index: usize,
        found: BlockId,
    },
    UnknownBlock {
        index: usize,
        block: BlockId,
    },
    MissingEdge {
        index: usize,
        from: BlockId,
        to: BlockId,
    },
}

impl fmt::Display for TraceViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceViolation::Empty => write!(f, "trace is empty"),
            TraceViolation::NotAtEntry { index, found } => {
                write!(f, "step {index}: {found} does not start at entry")
            }
            TraceViolation::UnknownBlock { index, block } => {
                write!(f, "step {index}: unknown block {block}")
            }
            TraceViolation::MissingEdge { index, from, to } => {
                write!(f, "step {index}: no edge {from} -> {to}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceReport {
    pub violations: Vec<TraceViolation>,
}

impl TraceReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for TraceReport {
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

pub fn validate_trace(cfg: &Cfg, trace: &Trace) -> TraceReport {
    let mut violations = Vec::new();
    let Some(&first) = trace.steps.first() else {
        return TraceReport {
            violations: vec![TraceViolation::Empty],
        };
    };
    if first != cfg.entry() {
        violations.push(TraceViolation::NotAtEntry {
            index: 0,
            found: first,
        });
    }
    for (index, &block) in trace.steps.iter().enumerate() {
        if !cfg.contains(block) {
            violations.push(TraceViolation::UnknownBlock { index, block });
        }
    }
    for (i, pair) in trace.steps.windows(2).enumerate() {
        let (from, to) = (pair[0], pair[1]);
        if cfg.contains(from) && cfg.contains(to) && !cfg.has_edge(from, to) {
            violations.push(TraceViolation::MissingEdge {
                index: i + 1,
                from,
                to,
            });
        }
    }
    TraceReport { violations }
}

/// One block id per line. Generated traces carry a
/// `# generated seed=<n> max_steps=<n>` header, which is read back.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut steps = Vec::new();
    let mut source = TraceSource::Replayed;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if steps.is_empty() {
                if let Some(meta) = parse_header(comment) {
                    source = meta;
                }
            }
            continue;
        }
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let id = line
            .parse::<BlockId>()
            .map_err(|msg| TraceError::Syntax { line: n + 1, msg })?;
        steps.push(id);
    }
    Ok(Trace { steps, source })
}

fn parse_header(comment: &str) -> Option<TraceSource> {
    let mut words = comment.split_whitespace();
    if words.next()? != "generated" {
        return None;
    }
    let mut seed = None;
    let mut max_steps = None;
    for w in words {
        if let Some(v) = w.strip_prefix("seed=") {
            seed = v.parse().ok();
        } else if let Some(v) = w.strip_prefix("max_steps=") {
            max_steps = v.parse().ok();
        }
    }
    Some(TraceSource::Generated {
        seed: seed?,
        max_steps: max_steps?,
    })
}

pub fn serialize_trace(trace: &Trace) -> String {
    let mut out = String::new();
    if let TraceSource::Generated { seed, max_steps } = trace.source {
        out.push_str(&format!("# generated seed={seed} max_steps={max_steps}\n"));
    }
    for id in &trace.steps {
        out.push_str(&format!("{id}\n"));
    }
    out
}
