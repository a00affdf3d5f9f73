//! `dpsom`: train, evaluate and inspect deep probabilistic self-organising maps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure, 1 anything else.

mod commands;
mod dataset;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

use commands::{CheckGradArgs, CheckpointArgs, SweepArgs, TrainArgs};
use failure::Failure;

#[derive(Parser)]
#[command(name = "dpsom", version, about = "Deep probabilistic self-organising maps")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainOpts {
    /// mnist, fmnist, synth-icu or csv:<path>
    #[arg(long)]
    dataset: String,
    /// JSON config; defaults to the dataset's preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckpointOpts {
    #[arg(long)]
    checkpoint: PathBuf,
    /// mnist, fmnist, synth-icu or csv:<path>
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train DPSOM (images) or T-DPSOM (series).
    Train(TrainOpts),
    /// Purity, NMI and Moran's I of a checkpoint on every split.
    Eval {
        #[command(flatten)]
        opts: CheckpointOpts,
        /// Expected grid (`RxC`); rejected when it differs from the checkpoint.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Roll the forecaster out over the last `horizon` steps of each series.
    Forecast {
        #[command(flatten)]
        opts: CheckpointOpts,
        #[arg(long, default_value_t = 6)]
        horizon: usize,
    },
    /// Write grid.csv, trajectories.csv and centroid tiles.
    ExportGrid(CheckpointOpts),
    /// Train every (value, seed) pair and tabulate metrics in sweep.csv.
    Sweep {
        #[command(flatten)]
        train: TrainOpts,
        /// beta, gamma or grid
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. `0,10,50,100` or `4x4,8x8`.
        #[arg(long)]
        values: String,
        #[arg(long, default_value = "0,1,2")]
        seeds: String,
    },
    /// Compare analytic gradients of every loss term with central differences.
    CheckGrad {
        #[arg(long, default_value = "synth-icu")]
        dataset: String,
        /// Random parameter points.
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl TrainOpts {
    fn args(&self) -> TrainArgs<'_> {
        TrainArgs { dataset: &self.dataset, config: self.config.as_deref(), overrides: &self.overrides, out: &self.out }
    }
}

impl CheckpointOpts {
    fn args(&self) -> CheckpointArgs<'_> {
        CheckpointArgs { checkpoint: &self.checkpoint, dataset: &self.dataset, out: &self.out }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train(o) => commands::train(o.args()),
        Command::Eval { opts, grid } => commands::eval(opts.args(), grid.as_deref()),
        Command::Forecast { opts, horizon } => commands::forecast(opts.args(), *horizon),
        Command::ExportGrid(o) => commands::export(o.args()),
        Command::Sweep { train, param, values, seeds } => commands::sweep(SweepArgs {
            train: train.args(),
            param,
            values: &commands::parse_values(values),
            seeds: &commands::parse_seeds(seeds)?,
        }),
        Command::CheckGrad { dataset, points, samples, h, tol, seed, out } => commands::check_grad(CheckGradArgs {
            dataset,
            points: *points,
            samples: *samples,
            h: *h,
            tol: *tol,
            seed: *seed,
            out: out.as_deref(),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
