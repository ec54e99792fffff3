//! Batch driver for the shapemiss library: configuration, per-frame stages
//! and the `shapemiss` command line.
//!
//! Every subcommand writes `summary.json` into its output directory with one
//! entry per frame (id, status, counts) plus totals and the effective config.
//! Outputs depend only on inputs and config, never on worker count.

pub mod config;
pub mod pipeline;
mod run;

pub use run::{run, BankArgs, Cli, Command, ConfigArgs, FrameArgs, RunOutcome};
