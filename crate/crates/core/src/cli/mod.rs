//! Command-line front end.
//!
//! Settings resolve in three layers: the TOML config file, then
//! `ADAPTCLK_*` environment variables, then flags.

pub mod config;
pub mod stages;

use std::path::PathBuf;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand, ValueEnum};

pub use config::{RunConfig, DEFAULT_CONFIG};
pub use stages::{derive_seed, run_all, run_stage, ReportFormat, StageContext, STAGES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Doc,
}

#[derive(Debug, Parser)]
#[command(name = "adaptclk", version, about = "Adaptive clocking flow: exec unit, delay profiles, classifier, pipeline speedup")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true, env = "ADAPTCLK_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, env = "ADAPTCLK_SEED")]
    pub seed: Option<u64>,
    /// Class configurations to run, e.g. `2` or `2,4`.
    #[arg(long, global = true, env = "ADAPTCLK_CLASSES", value_delimiter = ',', value_parser = clap::value_parser!(u64).range(2..=4))]
    pub classes: Option<Vec<u64>>,
    /// Output directory for every artifact.
    #[arg(long, global = true, env = "ADAPTCLK_OUT")]
    pub out: Option<PathBuf>,
    /// Machine-readable report flavour.
    #[arg(long, global = true, env = "ADAPTCLK_FORMAT", value_enum, default_value = "doc")]
    pub format: FormatArg,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the execution-unit netlist.
    BuildExecUnit,
    /// Generate workload traces and their delay profiles.
    Profile,
    /// Build class-balanced training sets.
    Dataset,
    /// Cross-validate and fit the forest and feature scaler.
    Train,
    /// Hyperparameter search with F1, speedup and hardware cost.
    Gridsearch,
    /// Compile trained forests into gate netlists.
    Codegen,
    /// Run the workloads through the adaptive pipeline model.
    Simulate,
    /// Render speedup, power and energy tables.
    Report,
    /// Every stage in order.
    RunAll,
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

impl Command {
    pub fn stage(&self) -> Option<&'static str> {
        Some(match self {
            Command::BuildExecUnit => "build-exec-unit",
            Command::Profile => "profile",
            Command::Dataset => "dataset",
            Command::Train => "train",
            Command::Gridsearch => "gridsearch",
            Command::Codegen => "codegen",
            Command::Simulate => "simulate",
            Command::Report => "report",
            Command::RunAll | Command::ShowConfig => return None,
        })
    }
}

impl Cli {
    /// Config file (or defaults) with the environment and flag overrides
    /// applied; clap has already merged env and flags.
    pub fn resolve(&self) -> Result<StageContext> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("config: reading `{}`", p.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("config: `{}`", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = &self.classes {
            cfg.classes = c.iter().map(|&c| c as usize).collect();
            cfg.grid.classes.retain(|g| cfg.classes.contains(g));
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate().map_err(|e| anyhow::anyhow!("config: {e}"))?;
        let format = match self.format {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Doc => ReportFormat::Doc,
        };
        Ok(StageContext { cfg, format })
    }
}

/// Parses nothing; runs an already parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let ctx = cli.resolve()?;
    match &cli.command {
        Command::RunAll => run_all(&ctx),
        Command::ShowConfig => {
            print!("{}", toml::to_string(&ctx.cfg)?);
            Ok(())
        }
        c => run_stage(&ctx, c.stage().expect("stage command")),
    }
}
