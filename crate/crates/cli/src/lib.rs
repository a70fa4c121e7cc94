//! Reproducible experiments on synthetic lesion data: generation, training,
//! prediction, evaluation and cross-strategy reports.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use entseg::data::Split;

use crate::commands::Context;
use crate::config::Strategy;
pub use crate::error::{exit, CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "entseg", version, about = "Entropy-regularized segmentation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; relative configured paths resolve against it.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the ID train/val/test splits and the shifted OOD test split.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train one strategy (grid search over lambda unless --lambda is given).
    Train {
        #[command(flatten)]
        common: Common,
        /// One of ce, ce+meall, ce+meep, ce+kl.
        #[arg(long)]
        strategy: String,
        /// Regularization weight; ignored for ce.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Write probability maps for one split.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val, test or ood_test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Evaluate a checkpoint on the ID and OOD test splits.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare evaluation outputs (aggregate.json files or their directories).
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Run synth, train, eval and report for every configured strategy.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| CliError::Usage(format!("unknown split {s:?}; expected train, val, test or ood_test")))
}

fn context(c: &Common) -> Result<Context> {
    Context::new(c.config.as_deref(), c.seed, &c.out)
}

/// Runs one parsed command, printing a short summary on stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => {
            let ctx = context(&common)?;
            let m = commands::cmd_synth(&ctx)?;
            println!("wrote {} scans to {} (config hash {})", m.samples.len(), ctx.paths.data.display(), m.config_hash);
        }
        Command::Train {
            common,
            strategy,
            lambda,
        } => {
            let strategy: Strategy = strategy.parse()?;
            let ctx = context(&common)?;
            let g = commands::cmd_train(&ctx, strategy, lambda)?;
            for e in &g.entries {
                println!(
                    "{strategy} lambda {}: val dice {:.4}, val ece {:.5}",
                    e.point.lambda, e.point.val_dice, e.point.val_ece
                );
            }
            println!("selected lambda {} -> {}", g.selected_lambda, ctx.checkpoint_path(strategy).display());
        }
        Command::Predict {
            common,
            checkpoint,
            split,
        } => {
            let split = parse_split(&split)?;
            let ctx = context(&common)?;
            let files = commands::cmd_predict(&ctx, &checkpoint, split)?;
            println!("wrote {} probability maps", files.len());
        }
        Command::Eval { common, checkpoint } => {
            let ctx = context(&common)?;
            let a = commands::cmd_eval(&ctx, &checkpoint)?;
            println!(
                "{}: ID dice {:.4}, ECE {:.5}; pooled entropy/dice r {}",
                a.strategy,
                a.id.dice_mean.unwrap_or(f64::NAN),
                a.id.ece_positive_prob,
                a.pooled.pearson_entropy_dice.map_or("n/a".into(), |r| format!("{r:.3}"))
            );
        }
        Command::Report { common, inputs } => {
            let ctx = context(&common)?;
            let c = commands::cmd_report(&ctx, &inputs)?;
            println!("compared {} rows into {}", c.rows.len(), ctx.paths.reports.display());
        }
        Command::Run { common } => {
            let ctx = context(&common)?;
            let s = commands::cmd_run(&ctx)?;
            for r in &s.runs {
                println!(
                    "{:9} lambda {:<5} ID dice {:.4}  OOD ECE {:.5}  pooled r {}",
                    r.strategy.name(),
                    r.grid.selected_lambda,
                    r.aggregate.id.dice_mean.unwrap_or(f64::NAN),
                    r.aggregate.ood.as_ref().map_or(f64::NAN, |o| o.ece_positive_prob),
                    r.aggregate.pooled.pearson_entropy_dice.map_or("n/a".into(), |r| format!("{r:.3}"))
                );
            }
        }
    }
    Ok(())
}
