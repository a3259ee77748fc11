//! Command-line driver: synthetic data, training, evaluation, backtests,
//! ablations and importance export.
pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use exformer_core::data::synth::SynthSpec;
use exformer_core::interpret::Aggregation;
use exformer_core::{Error, Result};

use commands::Inject;
use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "exformer", version, about = "Forecast, evaluate and backtest daily FX returns")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Look-back window, overriding the config.
    #[arg(long)]
    pub window: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic price panel with a planted linear signal.
    SynthData {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        n_covariates: usize,
        /// Comma-separated coefficients on the first covariates.
        #[arg(long, value_delimiter = ',', default_value = "0.8", allow_negative_numbers = true)]
        signal_coefs: Vec<f64>,
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        /// Weight on the target's own previous return.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        ar_coef: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train a model and write its checkpoint and epoch log.
    Train(Common),
    /// Score test-set forecasts against the random walk.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Defaults to checkpoint.json in the output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        inject: Option<Inject>,
    },
    /// Trade the test-set forecasts next to the benchmark strategies.
    Backtest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        inject: Option<Inject>,
        /// Transaction cost per position change, basis points.
        #[arg(long)]
        friction_bps: Option<f64>,
        /// Slippage per position change, basis points.
        #[arg(long)]
        slippage_bps: Option<f64>,
    },
    /// Train the full model and each single-component ablation.
    Ablate(Common),
    /// Export global and per-date variable importance.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_aggregation)]
        aggregation: Option<Aggregation>,
    },
}

fn parse_aggregation(s: &str) -> std::result::Result<Aggregation, String> {
    match s {
        "mean" => Ok(Aggregation::Mean),
        "max" => Ok(Aggregation::Max),
        other => Err(format!("expected mean or max, got {other}")),
    }
}

fn load(common: &Common, friction_bps: Option<f64>, slippage_bps: Option<f64>) -> Result<commands::Prepared> {
    let mut cfg = RunConfig::load(&common.config)?;
    cfg.apply(&Overrides {
        seed: common.seed,
        window: common.window,
        out_dir: common.out_dir.clone(),
        friction_bps,
        slippage_bps,
    });
    commands::prepare(cfg)
}

/// Runs one command and returns its console summary.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::SynthData {
            out_dir,
            n,
            n_covariates,
            signal_coefs,
            noise_std,
            ar_coef,
            seed,
        } => commands::cmd_synth(
            &SynthSpec {
                n,
                n_covariates,
                signal_coefs,
                noise_std,
                ar_coef,
                seed,
            },
            &out_dir,
        ),
        Command::Train(c) => commands::cmd_train(&load(&c, None, None)?),
        Command::Evaluate { common, checkpoint, inject } => {
            commands::cmd_evaluate(&load(&common, None, None)?, checkpoint.as_deref(), inject)
        }
        Command::Backtest {
            common,
            checkpoint,
            inject,
            friction_bps,
            slippage_bps,
        } => commands::cmd_backtest(&load(&common, friction_bps, slippage_bps)?, checkpoint.as_deref(), inject),
        Command::Ablate(c) => commands::cmd_ablate(&load(&c, None, None)?),
        Command::Explain {
            common,
            checkpoint,
            aggregation,
        } => commands::cmd_explain(&load(&common, None, None)?, checkpoint.as_deref(), aggregation),
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Alignment(_) | Error::Domain(_) | Error::Io { .. } | Error::Parse { .. } | Error::Degenerate(_) => 3,
        Error::Numeric { .. } | Error::Divergence { .. } => 4,
        Error::Dimension { .. } => 5,
        Error::Contract(_) => 1,
    }
}
