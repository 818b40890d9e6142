//! Simulation of access-pattern driven code compression for
//! memory-constrained embedded systems.
//!
//! Basic blocks live compressed in memory. A block is decompressed into a
//! separate area when execution needs it (or speculatively, shortly before),
//! and its decompressed copy is deleted once `k` branches have been taken
//! since it last ran. The simulator measures what this costs in cycles and
//! saves in bytes.

pub mod cfg;
pub mod cli;
pub mod memory;
pub mod policy;
pub mod sim;
pub mod trace;

pub use cfg::{parse_cfg, serialize_cfg, validate_cfg, BasicBlock, BlockId, Cfg, CfgError, Edge};
pub use memory::{BlockState, BranchSite, MemoryError, MemoryState};
pub use policy::{DecompMode, EdgeLimit, PolicyConfig, PolicyDecision, PolicyError, Predictor};
pub use sim::{run, sweep, CostModel, EventKind, Metrics, RunResult, SimError, TimelineEvent};
pub use trace::{generate_trace, parse_trace, serialize_trace, validate_trace, Trace, TraceSource};
