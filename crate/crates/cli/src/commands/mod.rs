pub mod evaluate;
pub mod preprocess;
pub mod saliency;
pub mod synth;
pub mod train;

use crate::config::RunConfig;
use ecgsl_core::error::{Error, Result};
use ecgsl_core::io::{atomic_write, read_checkpoint, Checkpoint};
use ecgsl_core::model::Stage;
use ecgsl_core::train::TrainReport;
use std::fmt::Write as _;
use std::path::Path;

/// Create the output directory and record the resolved configuration next
/// to whatever the command is about to produce.
fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out)?;
    atomic_write(&out.join("run-config.txt"), cfg.snapshot().as_bytes())
}

/// Tab-separated history log, one line per epoch. The metric column is `-`
/// for stages that do not evaluate one.
fn write_history(path: &Path, report: &TrainReport) -> Result<()> {
    let mut text = String::from("epoch\tloss\tmetric\tseconds\n");
    for r in &report.history {
        let metric = r.metric.map_or("-".to_string(), |m| m.to_string());
        let _ = writeln!(text, "{}\t{}\t{}\t{:.3}", r.epoch, r.loss, metric, r.seconds);
    }
    atomic_write(path, text.as_bytes())
}

/// Load a checkpoint that must come from a specific pipeline stage.
fn load_stage_checkpoint(path: &Path, want: Stage, needed_by: &str) -> Result<Checkpoint> {
    let ckpt = read_checkpoint(path)?;
    if ckpt.stage != want {
        return Err(Error::StageOrder(format!(
            "{needed_by} needs a '{}' checkpoint, but {} was written by stage '{}'",
            want.name(),
            path.display(),
            ckpt.stage.name()
        )));
    }
    Ok(ckpt)
}

/// Corpus segment length must match the model that will consume it.
fn check_seg_len(model_len: usize, corpus_len: usize) -> Result<()> {
    if model_len != corpus_len {
        return Err(Error::Data(format!(
            "checkpoint expects {model_len}-sample segments but the corpus holds {corpus_len}"
        )));
    }
    Ok(())
}
