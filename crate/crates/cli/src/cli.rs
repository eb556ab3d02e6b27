//! Command-line surface. Subcommand flags mirror the config `params` keys;
//! flags that are given override values from `--config`.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::is_false;

#[derive(Debug, Parser)]
#[command(name = "spinlab", version, about = "Glauber dynamics experiments for Ising models with a negative rank-one outlier")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base seed; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (1 runs sequentially).
    #[arg(long, global = true, env = "SPINLAB_THREADS")]
    pub threads: Option<usize>,
    /// Largest n for exact enumeration.
    #[arg(long, global = true)]
    pub max_enum_n: Option<usize>,
    /// Largest n for exact kernel computations.
    #[arg(long, global = true)]
    pub max_kernel_n: Option<usize>,
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Operator-norm error of the covariance and correlation approximations.
    ApproxError(ApproxErrorArgs),
    /// Deficits of tilted moments against their Gaussian values.
    TiltedSweep(TiltedSweepArgs),
    /// Spectral gap, MLSI estimate and mixing times of a small model.
    Mixing(MixingArgs),
    /// Extreme eigenvalues of random graphs and disorder matrices.
    Spectra(SpectraArgs),
    /// Regime thresholds for an ensemble descriptor.
    Regime(RegimeArgs),
    /// Exact Curie–Weiss conductance against its bound.
    CwBound(CwBoundArgs),
    /// Greedy search for gapped states (diagnostic).
    GappedSearch(GappedSearchArgs),
    /// Glauber traces.
    Simulate(SimulateArgs),
    /// Runs a config file, dispatching on its `command` field.
    Run,
    /// Runs the acceptance battery.
    Verify(VerifyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ApproxErrorArgs {
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub beta: Vec<f64>,
    /// Seeds per (n, beta): --seed, --seed + 1, ...
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long, value_parser = ["uniform", "gaussian"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field_scale: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_op: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TiltedSweepArgs {
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub m_list: Vec<u32>,
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gamma_list: Vec<f64>,
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub omega_list: Vec<f64>,
    /// Ensemble as JSON, e.g. '{"type":"fair_coin"}'.
    #[arg(long, value_parser = parse_json)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<serde_json::Value>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StartArg {
    Plus,
    Minus,
    Random,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Model JSON file; otherwise a model is drawn from the seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j_op: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_scale: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct MixingArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long, num_args = 1..)]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eps: Vec<f64>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<StartArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub restarts: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphArg {
    RandomRegular,
    ErdosRenyi,
    Sk,
}

#[derive(Debug, Args, Serialize)]
pub struct SpectraArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<GraphArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_graphs: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RegimeArgs {
    /// Ensemble descriptor as JSON, e.g. '{"type":"sk","n":1000,"mu":0}'.
    #[arg(long, value_parser = parse_json)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<serde_json::Value>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct CwBoundArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta0: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct GappedSearchArgs {
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<GraphArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "is_false")]
    pub balanced: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drop_samples: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<StartArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Fast,
    Full,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FaultArg {
    None,
    AlphaStar,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value = "fast")]
    pub level: LevelArg,
    /// Deliberate fault, for checking that the battery can fail.
    #[arg(long, value_enum, default_value = "none", hide = true)]
    pub fault: FaultArg,
}

fn parse_json(s: &str) -> Result<serde_json::Value, String> {
    serde_json::from_str(s).map_err(|e| e.to_string())
}
