//! `kfusion` — batch front end for the kernel-fusion pipeline.
//!
//! Exit codes: 0 success, 2 I/O or data problems, 3 configuration problems,
//! 4 numerical failures.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use kfusion_core::Result;

#[derive(Parser)]
#[command(
    name = "kfusion",
    version,
    about = "Multi-kernel time-series classification: features, Gram matrices, dense kernel embeddings and a kernel-dropout fusion network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write per-frame statistics features and shape histograms.
    Featurize {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build and store all base + composition Gram matrices.
    Kernels {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write a plain CSV next to each binary Gram file.
        #[arg(long)]
        csv: bool,
    },
    /// Train a fusion model (or run the full ablation with --variant all).
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// a | b | c | proposed | all | single:<statistics|shape|correlation|sum>
        #[arg(long, default_value = "proposed")]
        variant: String,
        /// Dump the per-kernel training embeddings next to the checkpoint.
        #[arg(long)]
        dump_embeddings: bool,
    },
    /// Evaluate a checkpoint on a frame file (inference only).
    Eval {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frame CSV; the checkpoint's split seed selects the test side.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for metrics files.
        #[arg(long, default_value = "eval")]
        out: PathBuf,
        /// Evaluate every frame in the file instead of the held-out side.
        #[arg(long)]
        full: bool,
    },
}

#[derive(clap::Args)]
struct CommonArgs {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame CSV path (overrides the config).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split/training seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(data) = &self.data {
            cfg.data = Some(data.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Featurize { common } => commands::cmd_featurize(&common.resolve()?),
        Command::Kernels { common, csv } => commands::cmd_kernels(&common.resolve()?, csv),
        Command::Train {
            common,
            variant,
            dump_embeddings,
        } => {
            let cfg = common.resolve()?;
            let variant = commands::parse_variant(&variant)?;
            commands::cmd_train(&cfg, variant, dump_embeddings)
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            full,
        } => commands::cmd_eval(&checkpoint, &data, &out, full),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
