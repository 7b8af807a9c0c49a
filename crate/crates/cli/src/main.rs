//! `offgrid`: batch experiments for off-the-grid sparse recovery.

mod config;
mod plan;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RawConfig};
use plan::{CertifyPlan, GmmPlan, RecoveryPlan};
use run::Meta;

#[derive(Parser)]
#[command(name = "offgrid", version, about = "Off-the-grid sparse recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the BLASSO for every seed and λ and report support stability.
    Recover(Common),
    /// Success frontier over grids of λ, m and noise level.
    Sweep(Common),
    /// Check admissibility and nondegeneracy at the published constants.
    Certify(Common),
    /// Sample, sketch and learn a Gaussian mixture.
    Gmm(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides `seeds`).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load(path: &Path) -> std::result::Result<RawConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(|e| Failure::Config(ConfigError { key: "--config".into(), message: format!("{e:#}") }))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    Ok(RawConfig::parse(&text, dir)?)
}

fn out_dir(c: &RawConfig, cli: &Option<PathBuf>) -> std::result::Result<PathBuf, ConfigError> {
    match (cli, c.path_opt("output.dir")?) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(p)) => Ok(p),
        (None, None) => config::err("output.dir", "missing (or pass --out)"),
    }
}

fn execute(cmd: Command) -> std::result::Result<bool, Failure> {
    let (name, common) = match &cmd {
        Command::Recover(c) => ("recover", c),
        Command::Sweep(c) => ("sweep", c),
        Command::Certify(c) => ("certify", c),
        Command::Gmm(c) => ("gmm", c),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Config(ConfigError { key: "--threads".into(), message: "must be at least 1".into() }));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure threads")?;
    }
    let raw = load(&common.config)?;
    let out = out_dir(&raw, &common.out)?;
    let seeds = common.seeds.as_deref();
    let mut pass = true;
    match cmd {
        Command::Recover(_) | Command::Sweep(_) => {
            let sweep = name == "sweep";
            let plan = RecoveryPlan::parse(&raw, seeds, sweep)?;
            let meta = Meta { command: name, config_hash: &raw.hash, seeds: &plan.seeds };
            if sweep {
                run::sweep(&plan, &out, &meta)?;
            } else {
                run::recover(&plan, &out, &meta)?;
            }
        }
        Command::Certify(_) => {
            if common.seeds.is_some() {
                return Err(Failure::Config(ConfigError { key: "--seeds".into(), message: "certify is deterministic and takes no seeds".into() }));
            }
            let plan = CertifyPlan::parse(&raw)?;
            let meta = Meta { command: name, config_hash: &raw.hash, seeds: &[] };
            pass = run::certify(&plan, &out, &meta)?;
        }
        Command::Gmm(_) => {
            let plan = GmmPlan::parse(&raw, seeds)?;
            let meta = Meta { command: name, config_hash: &raw.hash, seeds: &plan.seeds };
            run::gmm(&plan, &out, &meta)?;
        }
    }
    Ok(pass)
}

fn exit_code(r: &std::result::Result<bool, Failure>) -> u8 {
    match r {
        Ok(_) => 0,
        Err(Failure::Config(_)) => 2,
        Err(Failure::Runtime(_)) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = execute(cli.command);
    match &r {
        Err(Failure::Config(e)) => eprintln!("error: {e}"),
        Err(Failure::Runtime(e)) => eprintln!("error: {e:#}"),
        Ok(_) => {}
    }
    ExitCode::from(exit_code(&r))
}
