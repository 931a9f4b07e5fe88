//! Command-line front end over the library crate: generate a labelled
//! dataset, train the detector, explain individual anomalies, and run the
//! full method benchmark — all driven by one JSON config so a pipeline
//! reruns byte-identically.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Ctx;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "reshape",
    version,
    about = "Autoencoder anomaly detection with attribute-level Shapley explanations"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's `output` entry.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the config's `master_seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the configured dataset: data.csv, labels.json, schema.json.
    GenData,
    /// Train the detector on the generated dataset's unperturbed rows.
    Train,
    /// Explain anomalies with every configured method, one file pair per
    /// (anomaly, method).
    Explain {
        /// Row indices to explain; defaults to every labelled anomaly.
        #[arg(value_name = "ANOMALY_ID")]
        ids: Vec<usize>,
        /// Model file; defaults to model.json in the output directory.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
    },
    /// Run the full benchmark: metrics, curves, and the ranking summary.
    Evaluate,
    /// Re-render the ranking summary from saved metrics.
    Report,
}

/// Parses the command line, runs the command, and maps errors to exit
/// codes: 0 success, 2 config, 3 data, 4 numerical.
pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // A second initialization in the same process is harmless: thread
        // count never changes results.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("no config file: pass --config <FILE>".into()))?;
    let (mut cfg, fingerprint) = config::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let out_dir = cli.out.clone().or_else(|| cfg.output.clone()).ok_or_else(|| {
        CliError::Config("no output directory: pass --out <DIR> or set \"output\"".into())
    })?;
    let ctx = Ctx { master_seed: cfg.master_seed, config: cfg, fingerprint, out_dir };
    match &cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Explain { ids, model } => commands::explain(&ctx, ids, model.as_deref()),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Report => commands::report(&ctx),
    }
}
