//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or I/O error,
//! 3 configuration infeasible under the memory cap.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cfg::{parse_cfg, validate_cfg, Cfg};
use crate::policy::{DecompMode, EdgeLimit, PolicyConfig, Predictor};
use crate::sim::{self, CostModel, SimError};
use crate::trace::{generate_trace, parse_trace, serialize_trace, Trace};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "kedge", version, about = "Basic-block compression simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a CFG file and print every violation
    Validate {
        #[arg(long)]
        cfg: PathBuf,
    },
    /// Write a seeded random-walk trace
    GenTrace {
        #[arg(long)]
        cfg: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        max_steps: usize,
        /// Output file (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one configuration and write metrics JSON (and optionally the timeline)
    Simulate {
        #[command(flatten)]
        spec: RunArgs,
        #[arg(long, default_value = "2")]
        k_compress: EdgeLimit,
        #[arg(long, default_value = "on-demand")]
        mode: DecompMode,
        /// Metrics JSON path (stdout if omitted)
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        /// Timeline CSV path
        #[arg(long)]
        timeline_out: Option<PathBuf>,
    },
    /// Run every (mode, k_compress) combination and write a CSV table
    Sweep {
        #[command(flatten)]
        spec: RunArgs,
        /// Comma-separated k_compress values, e.g. 1,2,inf
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        k_list: Vec<String>,
        /// Comma-separated modes
        #[arg(long, value_delimiter = ',', default_value = "on-demand")]
        modes: Vec<DecompMode>,
        /// CSV path (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Inputs shared by `simulate` and `sweep`.
#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    cfg: PathBuf,
    /// Replay this trace file
    #[arg(long, conflicts_with_all = ["seed", "max_steps"])]
    trace: Option<PathBuf>,
    /// Generate the trace with this seed (needs --max-steps)
    #[arg(long, requires = "max_steps")]
    seed: Option<u64>,
    #[arg(long, requires = "seed")]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    k_pre: u32,
    /// Footprint cap in bytes
    #[arg(long)]
    cap: Option<u64>,
    #[arg(long, default_value_t = 0)]
    decomp_base: u64,
    #[arg(long, default_value_t = 0)]
    decomp_per_byte: u64,
    #[arg(long, default_value_t = 0)]
    exception_cycles: u64,
    #[arg(long, default_value_t = 0)]
    patch_cycles: u64,
    #[arg(long, default_value_t = 0)]
    compress_cycles: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceInput {
    File(PathBuf),
    Generate { seed: u64, max_steps: usize },
}

/// Everything one simulation needs, resolved from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub cfg_path: PathBuf,
    pub trace: TraceInput,
    pub policy: PolicyConfig,
    pub cost: CostModel,
    pub metrics_out: Option<PathBuf>,
    pub timeline_out: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = if e.is_infeasible() {
            EXIT_INFEASIBLE
        } else {
            EXIT_INVALID
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Runs the CLI with explicit output streams and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command, stdout) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message.trim_end());
            f.code
        }
    }
}

fn dispatch(command: Command, stdout: &mut dyn Write) -> Result<u8, Failure> {
    match command {
        Command::Validate { cfg } => cmd_validate(&cfg, stdout),
        Command::GenTrace {
            cfg,
            seed,
            max_steps,
            out,
        } => cmd_gen_trace(&cfg, seed, max_steps, out.as_deref(), stdout),
        Command::Simulate {
            spec,
            k_compress,
            mode,
            metrics_out,
            timeline_out,
        } => {
            let spec = spec.resolve(k_compress, mode, metrics_out, timeline_out)?;
            cmd_simulate(&spec, stdout)
        }
        Command::Sweep {
            spec,
            k_list,
            modes,
            out,
        } => {
            let ks = k_list
                .iter()
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse::<EdgeLimit>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(Failure::usage)?;
            if ks.is_empty() {
                return Err(Failure::usage("--k-list needs at least one value"));
            }
            if modes.is_empty() {
                return Err(Failure::usage("--modes needs at least one value"));
            }
            let spec = spec.resolve(ks[0], modes[0], None, None)?;
            cmd_sweep(&spec, &ks, &modes, out.as_deref(), stdout)
        }
    }
}

impl RunArgs {
    fn resolve(
        self,
        k_compress: EdgeLimit,
        mode: DecompMode,
        metrics_out: Option<PathBuf>,
        timeline_out: Option<PathBuf>,
    ) -> Result<RunSpec, Failure> {
        let trace = match (self.trace, self.seed, self.max_steps) {
            (Some(path), None, None) => TraceInput::File(path),
            (None, Some(seed), Some(max_steps)) => TraceInput::Generate { seed, max_steps },
            _ => {
                return Err(Failure::usage(
                    "give either --trace or both --seed and --max-steps",
                ))
            }
        };
        Ok(RunSpec {
            cfg_path: self.cfg,
            trace,
            policy: PolicyConfig {
                k_compress,
                decomp_mode: mode,
                k_pre: self.k_pre,
                predictor: Predictor::HitProbability,
                cap: self.cap,
            },
            cost: CostModel {
                decomp_base: self.decomp_base,
                decomp_per_byte: self.decomp_per_byte,
                exception_cycles: self.exception_cycles,
                patch_cycles: self.patch_cycles,
                compress_cycles: self.compress_cycles,
            },
            metrics_out,
            timeline_out,
        })
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text),
        None => stdout.write_all(text.as_bytes()),
    }
    .map_err(|e| {
        let name = path.map_or("stdout".to_string(), |p| p.display().to_string());
        Failure::usage(format!("{name}: {e}"))
    })
}

fn load_cfg(path: &Path) -> Result<Cfg, Failure> {
    let text = read(path)?;
    parse_cfg(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
}

fn load_valid_cfg(path: &Path) -> Result<Cfg, Failure> {
    let cfg = load_cfg(path)?;
    let report = validate_cfg(&cfg);
    if !report.is_ok() {
        return Err(Failure::invalid(format!("{}:\n{report}", path.display())));
    }
    Ok(cfg)
}

fn load_trace(spec: &RunSpec, cfg: &Cfg) -> Result<Trace, Failure> {
    match &spec.trace {
        TraceInput::File(path) => {
            let text = read(path)?;
            parse_trace(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))
        }
        TraceInput::Generate { seed, max_steps } => {
            generate_trace(cfg, *seed, *max_steps).map_err(|e| Failure::invalid(e.to_string()))
        }
    }
}

fn cmd_validate(path: &Path, stdout: &mut dyn Write) -> Result<u8, Failure> {
    let cfg = load_cfg(path)?;
    let report = validate_cfg(&cfg);
    if report.is_ok() {
        write_out(None, "ok\n", stdout)?;
        Ok(EXIT_OK)
    } else {
        Err(Failure::invalid(format!("{}:\n{report}", path.display())))
    }
}

fn cmd_gen_trace(
    cfg_path: &Path,
    seed: u64,
    max_steps: usize,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<u8, Failure> {
    if max_steps == 0 {
        return Err(Failure::usage("--max-steps must be positive"));
    }
    let cfg = load_valid_cfg(cfg_path)?;
    let trace =
        generate_trace(&cfg, seed, max_steps).map_err(|e| Failure::invalid(e.to_string()))?;
    write_out(out, &serialize_trace(&trace), stdout)?;
    Ok(EXIT_OK)
}

fn cmd_simulate(spec: &RunSpec, stdout: &mut dyn Write) -> Result<u8, Failure> {
    let cfg = load_valid_cfg(&spec.cfg_path)?;
    let trace = load_trace(spec, &cfg)?;
    let result = sim::run(&cfg, &trace, &spec.policy, &spec.cost)?;
    if let Some(path) = &spec.timeline_out {
        write_out(Some(path), &sim::timeline_csv(&result.timeline), stdout)?;
    }
    write_out(
        spec.metrics_out.as_deref(),
        &result.metrics.to_json(),
        stdout,
    )?;
    Ok(EXIT_OK)
}

fn cmd_sweep(
    spec: &RunSpec,
    ks: &[EdgeLimit],
    modes: &[DecompMode],
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<u8, Failure> {
    let cfg = load_valid_cfg(&spec.cfg_path)?;
    let trace = load_trace(spec, &cfg)?;
    let rows = sim::sweep(&cfg, &trace, &spec.policy, &spec.cost, ks, modes)?;
    write_out(out, &sim::sweep_csv(&rows), stdout)?;
    Ok(EXIT_OK)
}
