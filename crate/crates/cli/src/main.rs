//! `pandora`: command-line front end for the delegation simulator.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use pandora_delegation::harness::FamilyKind;

/// Report layout version embedded in every output.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "pandora", version, about = "Delegated Pandora's box search: solvers, mechanisms, gap experiments")]
struct Cli {
    /// Worker threads (does not change any output).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case", tag = "command")]
enum Command {
    /// Non-delegated benchmarks: exact optimum, index policy, upper bound.
    Solve(SolveArgs),
    /// Build or load a mechanism and play it against an agent.
    Delegate(DelegateArgs),
    /// Delegation-gap table over instance sizes.
    Gap(GapArgs),
    /// Per-element selectability of the contention resolution scheme.
    Selectability(SelectArgs),
    /// Print a generated instance as JSON.
    Family(FamilyArgs),
    /// Check an instance file; exits 2 with the violation list when invalid.
    Validate(ValidateArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Source {
    /// Instance JSON file.
    #[arg(long, conflicts_with = "family")]
    pub instance: Option<PathBuf>,
    /// Generated instance family.
    #[arg(long, value_parser = parse_family)]
    pub family: Option<FamilyKind>,
    /// Instance size for `--family`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Family parameters as KEY=VALUE; `model=free_agent` picks the utility model of random families.
    #[arg(long, num_args = 1.., value_parser = parse_param)]
    pub params: Vec<(String, String)>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Sampling {
    /// Monte Carlo samples when exact enumeration is too large.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    /// Seed; required whenever a run may sample.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Force exact enumeration.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Output {
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentArg {
    /// Exact best response.
    Dp,
    /// Index policy best response (matroid mechanisms).
    Index,
    /// Free agent probing every acceptable element, proposing the worst set.
    Adversarial,
    /// Same probes, proposing the best set for the principal.
    Favor,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodArg {
    Brute,
    Constructor,
}

#[derive(Args, Debug, Serialize)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub sampling: Sampling,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Serialize)]
pub struct DelegateArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub sampling: Sampling,
    /// Constructor name (binary, free-agent-kuniform, free-agent-ocrs, shared-cost) or a mechanism JSON file.
    #[arg(long)]
    pub mechanism: Option<String>,
    /// Target acceptance probability for free-agent-kuniform.
    #[arg(long, default_value_t = 0.5)]
    pub delta: f64,
    /// Agent model; the constructor's default when omitted.
    #[arg(long, value_enum)]
    pub agent: Option<AgentArg>,
    /// Write sampled interaction traces to this file.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Number of traces to keep.
    #[arg(long, default_value_t = 100)]
    pub trace_limit: usize,
    /// Write the mechanism as JSON, loadable again through `--mechanism`.
    #[arg(long)]
    pub save_mechanism: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Serialize)]
pub struct GapArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: FamilyKind,
    /// Comma-separated sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, num_args = 1.., value_parser = parse_param)]
    pub params: Vec<(String, String)>,
    #[command(flatten)]
    pub sampling: Sampling,
    /// Brute-force search or the model's constructor; brute force for the fixed families.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Most distinct acceptance options per group of identical elements.
    #[arg(long, default_value_t = 1)]
    pub max_classes: usize,
    /// Fill the wall_ms column (makes output time-dependent).
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Serialize)]
pub struct SelectArgs {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub sampling: Sampling,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Serialize)]
pub struct FamilyArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: FamilyKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, num_args = 1.., value_parser = parse_param)]
    pub params: Vec<(String, String)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    /// Instance JSON file.
    pub path: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub output: Output,
}

fn parse_family(s: &str) -> Result<FamilyKind, String> {
    s.parse().map_err(|e: pandora_delegation::Error| e.to_string())
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    Ok((k.to_string(), v.to_string()))
}

/// Misuse of the command line that clap cannot see (exit 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<pandora_delegation::Error>() {
        Some(e) if e.is_guard() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
