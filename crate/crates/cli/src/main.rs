//! Command-line pipeline for deconfounded recommendation experiments.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use idcf::error::Error;

use commands::identify::IdentifyArgs;
use commands::rank::RankArgs;
use commands::sweep::SweepArgs;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "idcf", version, about = "Deconfounded recommendation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set alpha=0.2 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        RunConfig::resolve(self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic confounded dataset.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the configured method (stage 1 + stage 2 with grid search).
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate trained checkpoints: metrics, p-values, MCC.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Exact identification demo for the binary scenario.
    Identify {
        /// p(z = 1)
        #[arg(long = "pi-z1")]
        pi_z1: f64,
        /// p(z = 1 | a)
        #[arg(long = "pi-z1-a")]
        pi_z1_a: f64,
        /// p(r = 1 | a)
        #[arg(long = "pi-r1-a")]
        pi_r1_a: f64,
        /// p(z = 1 | a, w) for w = 0,1, e.g. 0.3,0.7
        #[arg(long = "pi-z1-aw")]
        pi_z1_aw: Option<String>,
        /// p(r = 1 | a, w) for w = 0,1
        #[arg(long = "pi-r1-aw")]
        pi_r1_aw: Option<String>,
    },
    /// Rank items for users with a trained checkpoint pair.
    Rank {
        #[command(flatten)]
        config: ConfigArgs,
        /// Raw user id to rank for (repeatable; default: all users).
        #[arg(long = "user")]
        users: Vec<u64>,
        /// Comma-separated raw item ids (default: all items).
        #[arg(long)]
        items: Option<String>,
    },
    /// Run gen→train→eval across a parameter grid, e.g. --sweep alpha=0.05,0.1.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// param=v1,v2,... with param one of alpha, beta, gamma.
        #[arg(long)]
        sweep: String,
    },
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen { config } => commands::gen::run(&config.resolve()?),
        Command::Train { config } => commands::train::run(&config.resolve()?),
        Command::Eval { config } => commands::eval::run(&config.resolve()?),
        Command::Identify {
            pi_z1,
            pi_z1_a,
            pi_r1_a,
            pi_z1_aw,
            pi_r1_aw,
        } => commands::identify::run(&IdentifyArgs {
            pi_z1,
            pi_z1_a,
            pi_r1_a,
            pi_z1_aw,
            pi_r1_aw,
        }),
        Command::Rank {
            config,
            users,
            items,
        } => {
            let items = match items {
                Some(spec) => Some(
                    spec.split(',')
                        .map(|v| {
                            v.trim().parse::<u64>().map_err(|_| {
                                Error::Config(format!("bad item id {v:?} in --items"))
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                None => None,
            };
            commands::rank::run(&config.resolve()?, &RankArgs { users, items })
        }
        Command::Sweep { config, sweep } => {
            commands::sweep::run(&config.resolve()?, &SweepArgs { spec: sweep })
        }
    }
}

/// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Parse { .. }
        | Error::Duplicate(_)
        | Error::Data(_)
        | Error::Checkpoint(_)
        | Error::ColdStart(_)
        | Error::Io { .. } => 3,
        Error::Dimension(_)
        | Error::Domain(_)
        | Error::Numeric(_)
        | Error::Degenerate(_)
        | Error::NonIdentifiable(_)
        | Error::Inconsistent(_) => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
