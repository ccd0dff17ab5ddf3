use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::Format;

/// Policy learning and evaluation by cramming.
#[derive(Debug, Parser)]
#[command(name = "cramkit", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn a policy and estimate its value gain over the baseline.
    Cram(CramArgs),
    /// Train/test sample-splitting estimate for comparison.
    Split(SplitArgs),
    /// Monte Carlo study on a synthetic data-generating process.
    Simulate(SimulateArgs),
    /// Measure how much the learned policy moves between batches.
    Diagnose(DiagnoseArgs),
}

/// Flags accepted by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Input dataset (CSV with header).
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Report destination; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CI level complement, e.g. 0.05 for 95% intervals.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of batches T.
    #[arg(long)]
    pub batches: Option<usize>,
    /// Keep the second-to-last policy as final; the last batch only evaluates.
    #[arg(long)]
    pub debias: bool,
    /// value_difference or policy_value.
    #[arg(long)]
    pub estimand: Option<String>,
    /// slearner_ridge, mlearner_ridge, constant or alternating.
    #[arg(long, value_name = "NAME")]
    pub learner: Option<String>,
    /// Ridge penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// none, all or const:P.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Wrap the learner so consecutive policies move by at most C t^-(1+delta).
    #[arg(long)]
    pub stable: bool,
    #[arg(long, value_name = "FLOAT")]
    pub stable_c: Option<f64>,
    #[arg(long, value_name = "FLOAT")]
    pub stable_delta: Option<f64>,
    /// Worker threads for simulations; default all cores.
    #[arg(long, env = "CRAMKIT_THREADS")]
    pub threads: Option<usize>,
    /// Deterministic output: no timestamps or timing metadata.
    #[arg(long)]
    pub golden: bool,
}

#[derive(Debug, Args)]
pub struct CramArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Share of rows used for training.
    #[arg(long)]
    pub train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// linear, polynomial or null.
    #[arg(long)]
    pub dgp: Option<String>,
    /// Covariate dimension.
    #[arg(long)]
    pub p: Option<usize>,
    /// Sample size per replicate.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Comma-separated: cram, cram_debiased, split_80_20, split_60_40.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Covariate draws used to integrate the true values.
    #[arg(long)]
    pub n_oracle: Option<usize>,
    /// Include per-replicate records in JSON output.
    #[arg(long)]
    pub records: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    /// First step checked against the bound.
    #[arg(long)]
    pub t_min: Option<usize>,
    /// Bound K on t^(1+delta) Q_t; defaults to the stability constant C.
    #[arg(long)]
    pub bound: Option<f64>,
}
