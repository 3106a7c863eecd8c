//! Operator surface: a JSON run configuration with `--section.key=value`
//! overrides, and the `generate`, `pretrain`, `probe`, `eval`, `compare` and
//! `plot-roc` stages. Every stage writes under `output_dir/{stage}/` together
//! with a `config.json` snapshot of the resolved configuration and its digest.
//!
//! Section seeds are never taken from the file: `synthdata.seed`,
//! `pretrain.seed` and `probe.seed` are `derive_seed(root_seed, name, [])`
//! with `name` the section name.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{
    check_provenance, cmd_compare, cmd_eval, cmd_eval_stage, cmd_generate, cmd_plot_roc, cmd_pretrain, cmd_probe,
    for_method, load_manifest, pairs_for, ComparisonRow, ComparisonTable, EvalInputs, EvalMode, Layout, MethodResult,
};
pub use config::{extract_overrides, EvalConfig, RunConfig, SEED_ENV};

use crate::error::{Error, Result};
use crate::pretrain::{Method, ENCODER_FILE};

#[derive(Debug, Parser)]
#[command(
    name = "ridgeline",
    version,
    about = "Fingerprint encoder pretraining and verification probing",
    after_help = "Any configuration key can be overridden as --section.key=value (for example \
                  --pretrain.epochs=3 or --root_seed=7). RIDGELINE_SEED replaces root_seed."
)]
pub struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on data-parallel workers (defaults to the available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Generate,
    /// Pretrain the encoder.
    Pretrain {
        #[arg(long)]
        method: Method,
    },
    /// Train the verification head on a frozen encoder.
    Probe {
        #[arg(long, default_value = "enhance")]
        method: Method,
        /// Encoder checkpoint to probe instead of the one from `pretrain`.
        #[arg(long)]
        encoder: Option<PathBuf>,
    },
    /// Score the test pairs.
    Eval {
        #[arg(long, value_enum)]
        mode: EvalMode,
        #[arg(long, default_value = "enhance")]
        method: Method,
    },
    /// Run every pretraining method through the same probe and evaluation.
    Compare,
    /// Render ROC plots from evaluation outputs.
    PlotRoc {
        /// Methods to plot; all five when omitted.
        #[arg(long)]
        method: Vec<Method>,
        #[arg(long, value_enum)]
        mode: Vec<EvalMode>,
    },
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Executes a parsed command line against a resolved configuration and
/// returns the paths of the primary artifacts it produced.
pub fn execute(cli: &Cli, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let workers = cli.workers.unwrap_or_else(default_workers).max(1);
    let layout = Layout::new(config);
    match &cli.command {
        Command::Generate => {
            cmd_generate(config)?;
            Ok(vec![layout.dataset_dir().join(crate::synthdata::MANIFEST_FILE)])
        }
        Command::Pretrain { method } => {
            let cfg = for_method(config, *method);
            let manifest = load_manifest(&cfg)?;
            cmd_pretrain(&cfg, &manifest, workers)?;
            Ok(vec![layout.pretrain_dir(*method).join(ENCODER_FILE)])
        }
        Command::Probe { method, encoder } => {
            let cfg = for_method(config, *method);
            let manifest = load_manifest(&cfg)?;
            let enc = encoder.clone().unwrap_or_else(|| layout.pretrain_dir(*method).join(ENCODER_FILE));
            cmd_probe(&cfg, &enc, &manifest, workers)?;
            Ok(vec![layout.probe_dir(*method)])
        }
        Command::Eval { mode, method } => {
            let cfg = for_method(config, *method);
            cmd_eval_stage(&cfg, *mode, workers)?;
            Ok(vec![layout.eval_dir(*method, *mode).join("metrics.json")])
        }
        Command::Compare => {
            cmd_compare(config, &Method::ALL, workers)?;
            Ok(vec![layout.compare_dir().join("metrics.json")])
        }
        Command::PlotRoc { method, mode } => {
            let methods = if method.is_empty() { Method::ALL.to_vec() } else { method.clone() };
            let modes = if mode.is_empty() { EvalMode::ALL.to_vec() } else { mode.clone() };
            cmd_plot_roc(config, &methods, &modes)
        }
    }
}

/// Machine-readable error record printed on stderr.
pub fn error_record(err: &Error) -> serde_json::Value {
    let mut record = serde_json::json!({ "kind": err.kind(), "message": err.to_string() });
    if let Error::Dependency(path) | Error::Io { path, .. } = err {
        record["path"] = serde_json::Value::from(path.display().to_string());
    }
    serde_json::json!({ "error": record })
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with_args(args: Vec<String>, env_seed: Option<String>) -> i32 {
    let (args, overrides) = extract_overrides(args);
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = RunConfig::load(cli.config.as_deref(), &overrides, env_seed.as_deref())
        .and_then(|config| execute(&cli, &config));
    match outcome {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }
        Err(err) => {
            eprintln!("{}", error_record(&err));
            1
        }
    }
}
