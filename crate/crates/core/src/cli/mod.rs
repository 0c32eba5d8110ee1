//! Command-line surface.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use evire::corpus::CorpusError;
use evire::evidence::ErSupervision;
use evire::rexmodel::ReLossKind;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] evire::Error),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(name = "evire", version, about = "Evidence-guided document-level relation extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// Plain-text `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub evi_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub er_supervision: Option<ErSupervision>,
    #[arg(long, global = true)]
    pub re_loss: Option<ReLossKind>,
    /// Artifact directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Any configuration key, as `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write synthetic train, dev and distant corpora with their schema.
    GenData,
    /// Train the teacher on human-annotated data.
    TrainTeacher,
    /// Store teacher token distributions for the distant corpus.
    Distill,
    /// Train a fresh student on the distant corpus.
    TrainStudent,
    /// Continue training a checkpoint on human-annotated data.
    Finetune,
    /// Extract relations and evidence.
    Predict,
    /// Re-score predictions on evidence pseudo-documents.
    Fuse,
    /// Score predictions against gold annotations.
    Eval,
    /// Dump per-token and per-sentence importance for one entity pair.
    InspectAttn,
    /// List configuration keys.
    Keys,
}

impl Cli {
    /// Effective configuration: file, then `--set`, then named flags.
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let c = &self.common;
        let mut cfg = match &c.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &c.set {
            cfg.set_pair(pair)?;
        }
        let flags = [
            ("seed", c.seed.map(|v| v.to_string())),
            ("lambda", c.lambda.map(|v| v.to_string())),
            ("evi_threshold", c.evi_threshold.map(|v| v.to_string())),
            ("er_supervision", c.er_supervision.map(|v| v.to_string())),
            ("re_loss", c.re_loss.map(|v| v.to_string())),
            ("out_dir", c.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = cli.run_config()?;
    commands::dispatch(cli.command, &cfg)
}
