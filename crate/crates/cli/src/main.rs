use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use slap_core::pipeline::ExperimentConfig;
use slap_core::Error;

mod commands;
mod files;
mod report;

#[derive(Parser)]
#[command(name = "slap", version, about = "Shortcut learning for abstract planning on the Obstacle 2D domain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed and restricts the run to that one seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build option graphs on training tasks and write the candidate ledger.
    Collect(Common),
    /// Train a policy for every candidate that survived pruning.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Plan on held-out tasks with and without the trained shortcuts.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Directory written by `slap train`.
        #[arg(long)]
        checkpoints: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        protocol: commands::ProtocolArg,
        /// Also evaluate the training snapshots and write dynamics.csv.
        #[arg(long)]
        dynamics: bool,
    },
    /// Collect, train and evaluate every seed, then summarize.
    Run(Common),
    #[command(subcommand)]
    Baseline(Baseline),
    #[command(subcommand)]
    Ablate(Ablate),
    /// Summarize every result, dynamics and training-log file under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Baseline {
    /// Flat PPO on primitive actions, trained on the training tasks.
    Ppo(Common),
}

#[derive(Subcommand)]
enum Ablate {
    /// Sweep the rollout pruning threshold K as a percentage of N.
    Pruning {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30,35")]
        ratios: Vec<f64>,
    },
}

fn load_config(common: &Common) -> slap_core::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_toml(&files::read_text(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.n_seeds = 1;
    }
    Ok(cfg)
}

fn with(common: &Common) -> slap_core::Result<(ExperimentConfig, &Path)> {
    Ok((load_config(common)?, &common.out))
}

fn dispatch(cli: Cli) -> slap_core::Result<commands::Status> {
    match &cli.command {
        Command::Collect(c) => {
            let (cfg, out) = with(c)?;
            commands::collect(&cfg, out)
        }
        Command::Train { common, ledger } => {
            let (cfg, out) = with(common)?;
            commands::train(&cfg, ledger, out)
        }
        Command::Eval { common, checkpoints, protocol, dynamics } => {
            let (cfg, out) = with(common)?;
            commands::eval(&cfg, checkpoints, *protocol, *dynamics, out)
        }
        Command::Run(c) => {
            let (cfg, out) = with(c)?;
            commands::run(&cfg, out)
        }
        Command::Baseline(Baseline::Ppo(c)) => {
            let (cfg, out) = with(c)?;
            commands::baseline_ppo(&cfg, out)
        }
        Command::Ablate(Ablate::Pruning { common, ratios }) => {
            let (cfg, out) = with(common)?;
            commands::ablate_pruning(&cfg, ratios, out)
        }
        Command::Report { input, out } => report::report(input, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Exit code 2 is reserved for unsolvable tasks.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Unsolvable(_) => 2,
                Error::Divergence(_) => 3,
                _ => 1,
            })
        }
    }
}
