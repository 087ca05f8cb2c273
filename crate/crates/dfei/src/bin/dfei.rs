//! Command-line entry point: each library workflow as a subcommand.
//!
//! Errors print as a single `error: …` line on stderr with exit codes
//! grouped by cause: 2 for configuration and usage problems, 3 for data,
//! checkpoint, and I/O failures, 4 for numeric or internal state errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use dfei::config::RunConfig;
use dfei::data::Split;
use dfei::error::Result;
use dfei::runner::{self, Runner};

#[derive(Parser)]
#[command(
    name = "dfei",
    version,
    about = "Multi-domain CTR training with automatic domain feature \
             extraction and personalized integration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); omit to use the built-in synthetic
    /// benchmark defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory. Overrides the config file; the DFEI_OUT
    /// environment variable overrides both.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Override the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,

    /// Print the fully-resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes checkpoint.bin, train_report.json,
    /// resolved_config.json, and a manifest.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained checkpoint on one split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score; defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to score: train, validation, or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write the configured synthetic benchmark as dataset.csv.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train every model variant across seeds and compare them.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seed list; overrides eval.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Export a checkpoint's domain vectors and their similarity matrix.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to read; defaults to <out>/checkpoint.bin.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train across a grid of bank decay values and compare.
    AlphaSweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated decay values in [0, 1]; overrides
        /// eval.alpha_grid.
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Comma-separated seed list; overrides eval.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

/// Resolving needs the fitted schema, so this loads (or generates) the
/// dataset first.
fn print_resolved(cfg: RunConfig, out: Option<&Path>) -> Result<()> {
    let runner = Runner::new(cfg, out)?;
    let data = runner.load_data()?;
    let resolved = runner.config().resolved(&data.schema);
    println!("{}", serde_json::to_string_pretty(&resolved).expect("config serializes"));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => {
            let cfg = load_config(&common)?;
            if common.print_config {
                return print_resolved(cfg, common.out.as_deref());
            }
            let report = runner::cmd_train(cfg, common.out.as_deref())?;
            println!(
                "best epoch {} of {}: mean validation AUC {:.4}",
                report.best_epoch,
                report.epochs.len(),
                report.best_avg_val_auc
            );
        }
        Command::Evaluate { common, checkpoint, split } => {
            let cfg = load_config(&common)?;
            if common.print_config {
                return print_resolved(cfg, common.out.as_deref());
            }
            let split = Split::from_str(&split)?;
            let report =
                runner::cmd_evaluate(cfg, checkpoint.as_deref(), split, common.out.as_deref())?;
            for (d, auc) in report.domain_auc.iter().enumerate() {
                match auc {
                    Some(a) => println!("domain {d}: {split} AUC {a:.4}"),
                    None => println!("domain {d}: {split} AUC undefined (skipped)"),
                }
            }
            println!("mean {split} AUC {:.4}", report.avg_auc);
        }
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            if common.print_config {
                return print_resolved(cfg, common.out.as_deref());
            }
            let path = runner::cmd_gen_data(cfg, common.out.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::Ablate { common, seeds } => {
            let cfg = load_config(&common)?;
            if common.print_config {
                return print_resolved(cfg, common.out.as_deref());
            }
            let report = runner::cmd_ablate(cfg, seeds, common.out.as_deref())?;
            for mean in &report.mean_avg_auc {
                println!("{:<12} mean test AUC {:.4}", mean.variant, mean.mean_avg_auc);
            }
            for vt in &report.full_vs {
                println!(
                    "full vs {:<10} t = {:+.3}, p = {:.4}{}",
                    vt.variant,
                    vt.test.t,
                    vt.test.p,
                    if vt.test.degenerate { " (degenerate)" } else { "" }
                );
            }
            println!(
                "batch sequences {} across variants",
                if report.batch_audit_consistent { "identical" } else { "DIVERGED" }
            );
        }
        Command::ExportFeatures { common, checkpoint } => {
            let cfg = load_config(&common)?;
            if common.print_config {
                return print_resolved(cfg, common.out.as_deref());
            }
            let (features, similarity) =
                runner::cmd_export_features(cfg, checkpoint.as_deref(), common.out.as_deref())?;
            println!("wrote {}", features.display());
            println!("wrote {}", similarity.display());
        }
        Command::AlphaSweep { common, alphas, seeds } => {
            let cfg = load_config(&common)?;
            if common.print_config {
                return print_resolved(cfg, common.out.as_deref());
            }
            let report = runner::cmd_alpha_sweep(cfg, alphas, seeds, common.out.as_deref())?;
            for mean in &report.mean_by_alpha {
                println!("decay {:<4} mean test AUC {:.4}", mean.alpha, mean.mean_avg_auc);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
