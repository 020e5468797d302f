mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use output::Format;

#[derive(Parser, Debug)]
#[command(
    name = "stochctl",
    version,
    about = "Analyze, certify and simulate flaw-structured stochastic systems under noise"
)]
pub struct Cli {
    /// Output format (default: inferred from --out, else json).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Largest state count built explicitly.
    #[arg(long, global = true, env = "STOCHCTL_EXPLICIT_CAP", default_value_t = 1 << 16)]
    pub explicit_cap: u128,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate an instance file.
    Gen(GenArgs),
    /// Per-flaw potentials, congestions, causality graphs and surcharges.
    Analyze(AnalyzeArgs),
    /// Check the sufficient condition and compute step bounds (exit 0 certified, 1 not).
    Certify(CertifyArgs),
    /// Monte Carlo hitting times.
    Simulate(SimulateArgs),
    /// Trajectory, witness, break sequence and its code for one seed.
    Forensics(ForensicsArgs),
    /// Exact truncated process tree.
    Tree(TreeArgs),
    /// Numeric audit of the inequalities behind the bounds.
    Audit(AuditArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenArgs {
    #[command(subcommand)]
    pub family: Family,

    /// selfloop, uniform, point:STATE, greedy or greedy-all. Random
    /// instances keep their own sparse noise when omitted.
    #[arg(long, global = true)]
    pub noise: Option<String>,

    /// Probability of following the noise kernel.
    #[arg(long, global = true)]
    pub p: Option<f64>,

    #[arg(long, global = true, value_enum, default_value_t = FlavorArg::Auto)]
    pub flavor: FlavorArg,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FlavorArg {
    Auto,
    Explicit,
    Implicit,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase", tag = "family")]
pub enum Family {
    /// One flawed hub jumping uniformly to k flawless leaves.
    Star {
        #[arg(long, default_value_t = 8)]
        k: usize,
    },
    /// Proper coloring with Moser–Tardos resampling.
    Coloring {
        #[arg(long)]
        vertices: usize,
        /// Comma-separated edges such as 0-1,1-2.
        #[arg(long)]
        edges: String,
        #[arg(long)]
        colors: u32,
    },
    /// CNF formula; clauses separated by ';', literals signed and 1-based.
    Ksat {
        #[arg(long)]
        vars: usize,
        #[arg(long)]
        clauses: String,
    },
    /// Random sparse explicit instance.
    Random {
        #[arg(long, default_value_t = 32)]
        states: usize,
        #[arg(long, default_value_t = 4)]
        flaws: usize,
        #[arg(long, default_value_t = 0.2)]
        density: f64,
        #[arg(long, default_value_t = 6)]
        max_support: usize,
        #[arg(long, default_value_t = 2)]
        noise_support: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CongestionArg {
    Formal,
    Labeled,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DotKernel {
    Principal,
    Noise,
}

#[derive(Args, Debug, Serialize)]
pub struct AnalyzeArgs {
    pub instance: PathBuf,
    #[arg(long, value_enum, default_value_t = CongestionArg::Formal)]
    pub congestion: CongestionArg,
    /// Emit the causality digraph of this kernel as Graphviz instead.
    #[arg(long, value_enum)]
    pub dot: Option<DotKernel>,
}

#[derive(Args, Debug, Serialize)]
pub struct CertifyArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub lambda_tolerance: f64,
    /// Report bounds at λ* + pad.
    #[arg(long, default_value_t = 0.0)]
    pub pad: f64,
    /// Also report bounds at this λ.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0])]
    pub s: Vec<f64>,
    #[arg(long, value_enum, default_value_t = CongestionArg::Formal)]
    pub congestion: CongestionArg,
}

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Step budget per trial (default: certified steps(max s), else 10000).
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub start: Option<usize>,
    /// Keep stepping after the first flawless state (records the first hit).
    #[arg(long = "continue")]
    pub continue_after_hit: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0])]
    pub s: Vec<f64>,
}

#[derive(Args, Debug, Serialize)]
pub struct ForensicsArgs {
    pub instance: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub stream: u64,
    #[arg(long, default_value_t = 10_000)]
    pub budget: u64,
    #[arg(long)]
    pub start: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
pub struct TreeArgs {
    pub instance: PathBuf,
    /// Radius in bits.
    #[arg(long)]
    pub x: f64,
    #[arg(long, env = "STOCHCTL_TREE_CAP", default_value_t = 10_000_000)]
    pub cap: usize,
    #[arg(long)]
    pub root: Option<usize>,
    /// Omit the leaf list.
    #[arg(long)]
    pub no_leaves: bool,
}

#[derive(Args, Debug, Serialize)]
pub struct AuditArgs {
    /// Instances whose certificates are audited as well.
    pub instances: Vec<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub max_delta: usize,
    #[arg(long, default_value_t = 8)]
    pub max_b_ns: u32,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
