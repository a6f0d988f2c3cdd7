mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::commands::Setup;
use crate::config::{RunConfig, UsageError};

/// Critical rates, simulations and stability certificates for a queue whose
/// service time depends on server utilization.
///
/// Exit codes: 0 success, 2 invalid input or refused request, 3 numerical
/// failure, 1 anything else (I/O).
#[derive(Parser, Debug)]
#[command(name = "dynqueue", version)]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for sweeps and the static search; 0 picks one per core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Config override as a dotted key, e.g. `--set sim.lambda=1.05x`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct SimFlags {
    /// Arrival rate, absolute or relative such as `0.95x` (`sim.lambda`).
    #[arg(long)]
    lambda: Option<String>,
    /// Completions to simulate (`sim.horizon_tasks`).
    #[arg(long)]
    horizon: Option<u64>,
    /// Release threshold in (0, 1] (`policy.threshold`); omit for x_th.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Critical rate, threshold and certificate constants; S and R curves.
    Equilibrium,
    /// One simulation with trajectory, summary and verdict.
    Simulate(SimFlags),
    /// Simulations over `sweep.lambdas`, one subdirectory each.
    Sweep(SimFlags),
    /// Exhaustive check of the n-task lower bound.
    StaticOracle {
        /// Task count, 1..=4 (`static.n`).
        #[arg(long)]
        n: Option<usize>,
        /// Boundary state in (0, 1); defaults to x_th (`static.x`).
        #[arg(long)]
        x: Option<f64>,
        /// Idle grid spacing (`static.grid_step`).
        #[arg(long)]
        grid_step: Option<f64>,
        /// Longest idle on the grid (`static.idle_cap`).
        #[arg(long)]
        idle_cap: Option<f64>,
    },
    /// Simulation checked against the queue bound or overload bound.
    Certify(SimFlags),
}

impl SimFlags {
    fn overrides(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Some(l) = &self.lambda {
            v.push(format!("sim.lambda=\"{l}\""));
        }
        if let Some(h) = self.horizon {
            v.push(format!("sim.horizon_tasks={h}"));
        }
        if let Some(t) = self.threshold {
            v.push("policy.kind=\"threshold\"".into());
            v.push(format!("policy.threshold={t:?}"));
        }
        v
    }
}

impl Command {
    fn overrides(&self) -> Vec<String> {
        match self {
            Command::Equilibrium => Vec::new(),
            Command::Simulate(f) | Command::Sweep(f) | Command::Certify(f) => f.overrides(),
            Command::StaticOracle {
                n,
                x,
                grid_step,
                idle_cap,
            } => {
                let mut v = Vec::new();
                if let Some(n) = n {
                    v.push(format!("static.n={n}"));
                }
                for (key, value) in [("x", x), ("grid_step", grid_step), ("idle_cap", idle_cap)] {
                    if let Some(value) = value {
                        v.push(format!("static.{key}={value:?}"));
                    }
                }
                v
            }
        }
    }
}

fn execute(cli: Cli) -> Result<PathBuf> {
    let mut overrides = cli.overrides.clone();
    overrides.extend(cli.command.overrides());
    let mut cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    let setup = Setup::new(cfg, cli.workers)?;
    match cli.command {
        Command::Equilibrium => commands::equilibrium(&setup),
        Command::Simulate(_) => commands::simulate(&setup),
        Command::Sweep(_) => commands::sweep(&setup),
        Command::StaticOracle { .. } => commands::static_oracle(&setup),
        Command::Certify(_) => commands::certify(&setup),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dynqueue::Error>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(manifest) => {
            eprintln!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn exit_codes() {
        let numeric: Result<()> = Err(dynqueue::Error::NonConvergence {
            routine: "bisection",
            iterations: 200,
        }
        .into());
        assert_eq!(exit_code(&numeric.context("solving").unwrap_err()), 3);
        let refused = anyhow::Error::new(dynqueue::Error::Degenerate { x_th: 1.0 });
        assert_eq!(exit_code(&refused), 2);
        assert_eq!(exit_code(&config::usage("bad key")), 2);
        let io = anyhow::Error::new(std::io::Error::other("disk full"));
        assert_eq!(exit_code(&io), 1);
    }
}
