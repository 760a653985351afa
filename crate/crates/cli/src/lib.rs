//! The `proxplain` command line: train forests, explain instances, compare
//! models, and export proximity data.

use clap::{Parser, Subcommand};

pub mod commands;
pub mod input;
pub mod manifest;

use commands::{AuditArgs, DiffArgs, ExplainArgs, ExportProxArgs, OutlierArgs, TrainArgs};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "proxplain", version, about = "Random Forest explanations in proximity space")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Binarize a dataset and train a forest
    Train(TrainArgs),
    /// Per-feature contributions for one instance
    Explain(ExplainArgs),
    /// Contribution maps toward the wrong and right class and their squared difference
    Diff(DiffArgs),
    /// Compare two models' contributions over the same instances
    Audit(AuditArgs),
    /// Score training instances by distance to their own class
    Outliers(OutlierArgs),
    /// Write the training set's proximity distance matrix
    ExportProx(ExportProxArgs),
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train(a) => commands::cmd_train(a),
        Command::Explain(a) => commands::cmd_explain(a),
        Command::Diff(a) => commands::cmd_diff(a),
        Command::Audit(a) => commands::cmd_audit(a),
        Command::Outliers(a) => commands::cmd_outliers(a),
        Command::ExportProx(a) => commands::cmd_export_prox(a),
    }
}

/// Internal invariant violations get their own status; everything else is
/// blamed on the input.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<proxplain::Error>() {
        Some(e) if !e.is_input_error() => EXIT_INTERNAL,
        _ => EXIT_INPUT,
    }
}
