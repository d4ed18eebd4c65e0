//! Command line front end: argument parsing and dispatch.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fvmod_core::ancestry::{self, h};
use fvmod_core::cdi::SpeedTable;
use fvmod_core::coalescent::sample_block_counting;
use fvmod_core::harness::{self, EpsGrid, ExperimentConfig, Mode, TGrid};
use fvmod_core::lookdown::{self, Init, Setup, DEFAULT_MEMORY_BUDGET};
use fvmod_core::persist;
use fvmod_core::rng::replica_seed;
use fvmod_core::{par, Error, LambdaMeasure, Result};

#[derive(Debug, Parser)]
#[command(name = "fvmod", version, about = "Lambda-coalescent and lookdown simulator with modulus-of-continuity experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tabulate u(t), v(t) and psi(v(t)) on a time grid.
    Cdi {
        #[arg(long)]
        measure: String,
        /// `min:max:points[,log]`
        #[arg(long = "t-grid")]
        t_grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate block-counting paths.
    Coalesce {
        #[arg(long)]
        measure: String,
        #[arg(long)]
        n0: u64,
        #[arg(long)]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one lookdown path and write it to a directory.
    Lookdown {
        #[arg(long)]
        measure: String,
        #[arg(long)]
        n: u32,
        #[arg(long, default_value_t = 1)]
        dim: usize,
        #[arg(long)]
        horizon: f64,
        /// `dyadic:<k>` or `list:<t1,t2,...>`
        #[arg(long)]
        checkpoints: String,
        /// `point:<x1,..>` or `gaussian`
        #[arg(long, default_value = "point:0")]
        init: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MEMORY_BUDGET)]
        budget: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dislocations for `r,s,t` triples on a stored lookdown path.
    Ancestry {
        #[arg(long = "in")]
        input: PathBuf,
        /// File with one `r,s,t` triple per line.
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Global or local modulus scans.
    Modulus {
        #[arg(value_enum)]
        kind: ModulusKind,
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// rho(t)/h(t) from a point mass at the origin.
    Rho {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Block counts against the speed function.
    Nvcheck {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Lookdown-recovered block counts against the direct coalescent.
    Lawcheck {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModulusKind {
    Global,
    Left,
    Right,
}

/// Experiment flags. Values given here override those from `--config`.
#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Dyadic exponent range `kmin:kmax` for eps = 2^-k.
    #[arg(long)]
    pub eps: Option<String>,
    /// Number of evenly spaced times, or `list:<t1,..>`.
    #[arg(long = "t-grid")]
    pub t_grid: Option<String>,
    #[arg(long = "c-values", value_delimiter = ',')]
    pub c_values: Option<Vec<f64>>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "alpha-star")]
    pub alpha_star: Option<f64>,
    /// `t` in left mode, `s` in right mode.
    #[arg(long = "fixed-time")]
    pub fixed_time: Option<f64>,
    #[arg(long)]
    pub n0: Option<u64>,
    #[arg(long = "s-values", value_delimiter = ',')]
    pub s_values: Option<Vec<f64>>,
    #[arg(long = "r-values", value_delimiter = ',')]
    pub r_values: Option<Vec<f64>>,
    #[arg(long = "compare-measure")]
    pub compare_measure: Option<String>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub budget: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_cli<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    Cli::try_parse_from(argv)
}

fn parse_eps(spec: &str) -> Result<EpsGrid> {
    let bad = || Error::Config(format!("bad eps range {spec:?}; expected kmin:kmax"));
    let (a, b) = spec.split_once(':').ok_or_else(bad)?;
    Ok(EpsGrid {
        k_min: a.trim().parse().map_err(|_| bad())?,
        k_max: b.trim().parse().map_err(|_| bad())?,
    })
}

fn parse_t_grid(spec: &str) -> Result<TGrid> {
    if let Some(list) = spec.strip_prefix("list:") {
        return list
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad time {s:?}"))))
            .collect::<Result<Vec<f64>>>()
            .map(TGrid::List);
    }
    spec.trim()
        .parse()
        .map(TGrid::Count)
        .map_err(|_| Error::Config(format!("bad t grid {spec:?}; expected a count or list:<t,..>")))
}

impl ExperimentArgs {
    /// Assemble and validate the config for `mode`.
    pub fn to_config(&self, mode: Mode) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = ExperimentConfig::load(path)?;
                if cfg.mode != mode {
                    return Err(Error::Config(format!(
                        "{} has mode {}, but the command runs {mode}",
                        path.display(),
                        cfg.mode
                    )));
                }
                cfg
            }
            None => {
                let measure = self
                    .measure
                    .as_deref()
                    .ok_or_else(|| Error::Config("--measure is required without --config".into()))?;
                ExperimentConfig::new(mode, measure)
            }
        };
        if let Some(v) = &self.measure {
            cfg.measure = v.clone();
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.dim {
            cfg.d = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = &self.eps {
            cfg.eps_grid = parse_eps(v)?;
        }
        if let Some(v) = &self.t_grid {
            cfg.t_grid = parse_t_grid(v)?;
        }
        if let Some(v) = &self.c_values {
            cfg.c_values = v.clone();
        }
        if let Some(v) = self.reps {
            cfg.replicas = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.beta.is_some() {
            cfg.beta = self.beta;
        }
        if let Some(v) = self.alpha_star {
            cfg.alpha_star = v;
        }
        if self.fixed_time.is_some() {
            cfg.fixed_time = self.fixed_time;
        }
        if self.n0.is_some() {
            cfg.n0 = self.n0;
        }
        if let Some(v) = &self.s_values {
            cfg.s_values = v.clone();
        }
        if let Some(v) = &self.r_values {
            cfg.r_values = v.clone();
        }
        if self.compare_measure.is_some() {
            cfg.compare_measure = self.compare_measure.clone();
        }
        if let Some(v) = &self.init {
            cfg.init = v.clone();
        }
        if let Some(v) = self.budget {
            cfg.memory_budget = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Command {
    /// The experiment config for harness subcommands; `None` for the others.
    pub fn experiment(&self) -> Option<Result<(ExperimentConfig, &Path)>> {
        let (mode, exp) = match self {
            Command::Modulus { kind, exp } => (
                match kind {
                    ModulusKind::Global => Mode::Global,
                    ModulusKind::Left => Mode::LocalLeft,
                    ModulusKind::Right => Mode::LocalRight,
                },
                exp,
            ),
            Command::Rho { exp } => (Mode::RhoOrigin, exp),
            Command::Nvcheck { exp } => (Mode::NvCheck, exp),
            Command::Lawcheck { exp } => (Mode::LawCheck, exp),
            _ => return None,
        };
        Some(exp.to_config(mode).map(|cfg| (cfg, exp.out.as_path())))
    }
}

/// `min:max:points[,log]`
fn parse_time_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("bad t grid {spec:?}; expected min:max:points[,log]"));
    let (body, log) = match spec.strip_suffix(",log") {
        Some(b) => (b, true),
        None => (spec, false),
    };
    let parts: Vec<&str> = body.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let k: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo) || k < 1 {
        return Err(bad());
    }
    if k == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..k)
        .map(|i| {
            let f = i as f64 / (k - 1) as f64;
            if log {
                lo * (hi / lo).powf(f)
            } else {
                lo + (hi - lo) * f
            }
        })
        .collect())
}

fn read_triples(path: &Path) -> Result<Vec<(f64, f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('r') {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: expected r,s,t", lineno + 1),
            })?;
        if vals.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: expected r,s,t", lineno + 1),
            });
        }
        out.push((vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(exp) = cli.command.experiment() {
        let (cfg, out) = exp?;
        let rows = harness::run(&cfg)?;
        return harness::write_results(&rows, out);
    }
    match &cli.command {
        Command::Cdi { measure, t_grid, out } => {
            let m = LambdaMeasure::parse(measure)?;
            let table = SpeedTable::new(&m)?;
            let mut records = Vec::new();
            for t in parse_time_grid(t_grid)? {
                let v = table.v(t)?;
                records.push(format!("{t},{},{v},{}", table.u(t)?, table.psi(v)));
            }
            persist::write_csv(out, "t,u,v,psi_at_v", records)
        }
        Command::Coalesce {
            measure,
            n0,
            horizon,
            reps,
            seed,
            out,
        } => {
            let m = LambdaMeasure::parse(measure)?;
            let paths = par::map_replicas(*reps, |r| sample_block_counting(&m, *n0, *horizon, replica_seed(*seed, r)))?;
            persist::write_block_paths(&paths, out)
        }
        Command::Lookdown {
            measure,
            n,
            dim,
            horizon,
            checkpoints,
            init,
            seed,
            budget,
            out,
        } => {
            let m = LambdaMeasure::parse(measure)?;
            let setup = Setup {
                n: *n,
                d: *dim,
                horizon: *horizon,
                checkpoints: lookdown::parse_checkpoints(checkpoints, *horizon)?,
                init: Init::parse(init, *dim)?,
                memory_budget: *budget,
            };
            let path = lookdown::simulate(&m, &setup, *seed)?;
            persist::write_lookdown(&path, &m.label(), out)
        }
        Command::Ancestry { input, pairs, out } => {
            let (path, _) = persist::read_lookdown(input)?;
            let mut records = Vec::new();
            for (r, s, t) in read_triples(pairs)? {
                let hv = ancestry::dislocation_h(&path, r, s, t, path.n)?;
                let blocks = ancestry::block_count(&path.events, t, r, path.n)?;
                let he = h(s - r);
                records.push(format!("{r},{s},{t},{blocks},{hv},{he},{}", hv / he));
            }
            persist::write_csv(out, "r,s,t,N_rt,H,h_eps,ratio", records)
        }
        _ => unreachable!("experiment commands are handled above"),
    }
}

/// Process exit code for a run result: 0, 2 for configuration errors, 3 for
/// budget refusals, 1 otherwise.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(Error::Budget { .. }) => 3,
        Err(e) if e.is_config_error() => 2,
        Err(_) => 1,
    }
}
