mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::RunOptions;

#[derive(Parser)]
#[command(name = "mtv-cbf", version, about = "Learned MTV margins and CBF safety filtering for car-like robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the seed the command draws from.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample relative poses and label them with the exact margin.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the margin network, on a saved dataset or a freshly drawn one.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Measure the network's approximation error on fresh samples.
    EvalBound {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Simulate one scenario and write the log and metrics.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Apply the nominal inputs unfiltered, with no evasive offset.
        #[arg(long)]
        no_filter: bool,
    },
    /// Run two scenario configs side by side.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::GenData { common } => {
            let mut l = config::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                l.config.training.seed = s;
            }
            commands::gen_data(&l, &common.out)
        }
        Command::Train { common, data } => {
            let mut l = config::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                l.config.training.seed = s;
            }
            commands::train_model(&l, &common.out, data.as_deref())
        }
        Command::EvalBound { common, model } => {
            let mut l = config::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                l.config.bound.seed = s;
            }
            commands::eval_bound(&l, &common.out, model.as_deref())
        }
        Command::Run {
            common,
            model,
            no_filter,
        } => {
            let mut l = config::load(common.config.as_deref())?;
            if let Some(s) = common.seed {
                l.config.scenario.seed = Some(s);
            }
            let opts = RunOptions {
                model: model.as_deref(),
                no_filter,
            };
            commands::run(&l, &common.out, &opts)
        }
        Command::Compare { a, b, out, seed } => {
            let mut la = config::load(Some(&a))?;
            let mut lb = config::load(Some(&b))?;
            if let Some(s) = seed {
                la.config.scenario.seed = Some(s);
                lb.config.scenario.seed = Some(s);
            }
            let label = |p: &PathBuf| p.file_stem().map_or("?".into(), |s| s.to_string_lossy().into_owned());
            commands::compare(&la, &lb, [label(&a), label(&b)], &out)
        }
    }
}
