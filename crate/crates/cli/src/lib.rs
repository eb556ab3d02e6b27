//! Experiment runner for `spinlab`: strict JSON configs, seeded sweeps and
//! atomic CSV/JSON artifacts that carry their config hash and seed.

// `!(x >= a)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use cli::{Cli, Command, FaultArg, LevelArg};
use commands::Context;
use config::{config_hash, overrides, resolve_params, CommandName, ExperimentConfig};
use output::{emit, Artifact, Meta};
use spinlab::exact::Limits;
use spinlab::Exec;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Capacity(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad configs or parameters, 3 for size caps, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Capacity(_) => 3,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<spinlab::Error> for CliError {
    fn from(e: spinlab::Error) -> Self {
        use spinlab::Error as E;
        match e {
            E::Capacity { .. } => CliError::Capacity(e.to_string()),
            E::Argument(_) | E::Dimension { .. } | E::Domain(_) | E::Serde(_) => CliError::Config(e.to_string()),
            E::Convergence(_) => CliError::Failed(e.to_string()),
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("spinlab: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let g = &cli.global;
    let exec = configure_threads(g.threads)?;
    let mut limits = Limits::with_exec(exec);
    if let Some(v) = g.max_enum_n {
        limits.max_enum_n = v;
    }
    if let Some(v) = g.max_kernel_n {
        limits.max_kernel_n = v;
    }
    let config = match &g.config {
        Some(path) => Some(ExperimentConfig::load(path)?),
        None => None,
    };

    if let Command::Verify(args) = &cli.command {
        let level = match args.level {
            LevelArg::Fast => verify::Level::Fast,
            LevelArg::Full => verify::Level::Full,
        };
        let fault = match args.fault {
            FaultArg::None => verify::Fault::None,
            FaultArg::AlphaStar => verify::Fault::AlphaStar,
        };
        let report = verify::run(level, fault);
        let meta = Meta::new("verify", config::hex(&[]), 0);
        let value = serde_json::to_value(&report).expect("report serializes");
        emit(Artifact::Json(value), &meta, g.out.as_deref())?;
        return Ok(if report.all_passed { 0 } else { 1 });
    }

    let (name, over) = match &cli.command {
        Command::ApproxError(a) => (CommandName::ApproxError, overrides(a)),
        Command::TiltedSweep(a) => (CommandName::TiltedSweep, overrides(a)),
        Command::Mixing(a) => (CommandName::Mixing, overrides(a)),
        Command::Spectra(a) => (CommandName::Spectra, overrides(a)),
        Command::Regime(a) => (CommandName::Regime, overrides(a)),
        Command::CwBound(a) => (CommandName::CwBound, overrides(a)),
        Command::GappedSearch(a) => (CommandName::GappedSearch, overrides(a)),
        Command::Simulate(a) => (CommandName::Simulate, overrides(a)),
        Command::Run => match &config {
            Some(c) => (c.command, Map::new()),
            None => return Err(CliError::Config("run needs --config".into())),
        },
        Command::Verify(_) => unreachable!("handled above"),
    };
    if let Some(c) = &config {
        if c.command != name {
            return Err(CliError::Config(format!(
                "config is for '{}', not '{}'",
                c.command.as_str(),
                name.as_str()
            )));
        }
    }
    let seed = g.seed.or(config.as_ref().and_then(|c| c.seed)).unwrap_or(0);
    let out = g.out.clone().or(config.as_ref().and_then(|c| c.output.clone()));
    let ctx = Context { seed, limits };
    let base = config.as_ref().map(|c| &c.params);

    let (artifact, hash) = match name {
        CommandName::ApproxError => execute(name, base, over, seed, |p| commands::approx_error(p, &ctx))?,
        CommandName::TiltedSweep => execute(name, base, over, seed, |p| commands::tilted_sweep(p, &ctx))?,
        CommandName::Mixing => execute(name, base, over, seed, |p| commands::mixing(p, &ctx))?,
        CommandName::Spectra => execute(name, base, over, seed, |p| commands::spectra(p, &ctx))?,
        CommandName::Regime => execute(name, base, over, seed, |p| commands::regime(p, &ctx))?,
        CommandName::CwBound => execute(name, base, over, seed, |p| commands::cw_bound(p, &ctx))?,
        CommandName::GappedSearch => execute(name, base, over, seed, |p| commands::gapped(p, &ctx))?,
        CommandName::Simulate => execute(name, base, over, seed, |p| commands::simulate(p, &ctx))?,
    };
    emit(artifact, &Meta::new(name.as_str(), hash, seed), out.as_deref())?;
    Ok(0)
}

fn execute<P, F>(
    name: CommandName,
    base: Option<&Map<String, Value>>,
    over: Map<String, Value>,
    seed: u64,
    f: F,
) -> Result<(Artifact, String), CliError>
where
    P: DeserializeOwned + Serialize,
    F: FnOnce(&P) -> Result<Artifact, CliError>,
{
    let params: P = resolve_params(base, over)?;
    let hash = config_hash(name, &params, seed);
    Ok((f(&params)?, hash))
}

fn configure_threads(threads: Option<usize>) -> Result<Exec, CliError> {
    match threads {
        Some(0) => Err(CliError::Config("--threads must be >= 1".into())),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(t) => {
            // A second call in the same process keeps the existing pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
        None => Ok(Exec::default()),
    }
}
