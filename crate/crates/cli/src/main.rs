//! `aps`: generate populations and graphs, run reference, APS and baseline
//! rollouts, evaluate trajectories and emit report tables.

mod commands;
mod config;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::{Method, Workspace};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "aps", version, about = "Adaptive prototype simulation runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Log verbosity (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed (same as `--override seeds.master=N`).
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (same as `--override output_dir=PATH`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Set a dotted config key, e.g. `engine.schedule.fixed_rate=0.3`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn context(&self) -> Result<Workspace> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seeds.master={seed}"));
        }
        if let Some(out) = &self.out {
            overrides.push(format!("output_dir={}", toml::Value::String(out.display().to_string())));
        }
        Ok(Workspace::new(RunConfig::load(self.config.as_deref(), &overrides)?))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the population and save it under `<out>/population`.
    GenPop(Common),
    /// Build the social graph and save it under `<out>/graph`.
    GenGraph(Common),
    /// Brute-force rollout querying every agent every round.
    RunReference(RunArgs),
    /// Adaptive prototype rollout.
    RunAps(RunArgs),
    /// Same-budget baseline rollout.
    RunBaseline(RunArgs),
    /// Compare a trajectory with a reference trajectory.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Method `trajectory.json`.
        #[arg(long)]
        method: PathBuf,
        /// Reference `trajectory.json`.
        #[arg(long)]
        reference: PathBuf,
        /// Also split the error into estimation and context mismatch
        /// (synthetic oracle only; rebuilds the inputs from the config).
        #[arg(long)]
        decompose: bool,
    },
    /// Call-scaling table over `report.sweep` and drift curves from evaluations.
    Report {
        #[command(flatten)]
        common: Common,
        /// `evaluation.json` files to draw drift curves from. Repeatable.
        #[arg(long = "evaluation")]
        evaluations: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,

    /// Continue from `<out>/checkpoint`; refused when the config hash differs.
    #[arg(long)]
    resume: bool,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenPop(c) => commands::gen_pop(&c.context()?),
        Command::GenGraph(c) => commands::gen_graph(&c.context()?),
        Command::RunReference(a) => commands::run(&a.common.context()?, Method::Reference, a.resume),
        Command::RunAps(a) => commands::run(&a.common.context()?, Method::Aps, a.resume),
        Command::RunBaseline(a) => commands::run(&a.common.context()?, Method::Baseline, a.resume),
        Command::Evaluate { common, method, reference, decompose } => {
            commands::evaluate_cmd(&common.context()?, &method, &reference, decompose)
        }
        Command::Report { common, evaluations } => commands::report(&common.context()?, &evaluations),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::INFO,
        1 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .with_max_level(level)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
