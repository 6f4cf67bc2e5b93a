//! The `ecgsl` command: a stage-gated pipeline over synthetic or imported
//! single-lead ECG corpora.
//!
//! ```text
//! synth → preprocess → pretrain-ae → pretrain-mask → finetune → evaluate
//!                                                            ↘ saliency
//! ```
//!
//! Every command resolves its configuration as defaults < config file <
//! flags, writes a `run-config.txt` snapshot next to its outputs, and fails
//! with a single `error[code]: message` line on stderr and exit code 1.

pub mod args;
pub mod commands;
pub mod config;

pub use args::{Cli, Command};
use ecgsl_core::Result;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth::run(a),
        Command::Preprocess(a) => commands::preprocess::run(a),
        Command::PretrainAe(a) => commands::train::run_pretrain_ae(a),
        Command::PretrainMask(a) => commands::train::run_pretrain_mask(a),
        Command::Finetune(a) => commands::train::run_finetune(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Saliency(a) => commands::saliency::run(a),
    }
}
