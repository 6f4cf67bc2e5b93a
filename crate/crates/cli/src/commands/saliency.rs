use super::{check_seg_len, load_stage_checkpoint, prepare_out};
use crate::args::SaliencyArgs;
use crate::config::RunConfig;
use ecgsl_core::error::{Error, Result};
use ecgsl_core::io::{atomic_write, read_segments};
use ecgsl_core::model::Stage;
use ecgsl_core::saliency::{
    class_average_saliency, class_saliency_csv, highest_saliency_segment,
};
use std::fmt::Write as _;

/// Class-averaged input-saliency curves for a fine-tuned model, plus each
/// class's single most influential mean heartbeat. Classes the model never
/// predicts on this corpus render as empty CSV columns.
pub fn run(args: &SaliencyArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref())?;
    let (data, seg_len) = read_segments(&args.data)?;
    let ckpt = load_stage_checkpoint(&args.model, Stage::Finetuned, "saliency")?;
    check_seg_len(ckpt.state.config.seg_len, seg_len)?;
    let state = ckpt.state;
    let classes = state.config.classes;

    let mut per_class = Vec::with_capacity(classes);
    let mut top = Vec::with_capacity(classes);
    let mut summary = Vec::with_capacity(classes);
    for c in 0..classes {
        match class_average_saliency(&state, &data, c) {
            Ok((seg, sal, count)) => {
                per_class.push(Some((seg, sal)));
                top.push(Some(highest_saliency_segment(&state, &data, c)?));
                summary.push(format!("class {c}: {count} beats"));
            }
            Err(Error::EmptyClass(_)) => {
                per_class.push(None);
                top.push(None);
                summary.push(format!("class {c}: never predicted"));
            }
            Err(e) => return Err(e),
        }
    }

    let mut top_csv = String::from("pos");
    for c in 0..classes {
        let _ = write!(top_csv, ",class{c}_top_segment");
    }
    top_csv.push('\n');
    for j in 0..seg_len {
        let _ = write!(top_csv, "{j}");
        for entry in &top {
            match entry {
                Some(curve) => {
                    let _ = write!(top_csv, ",{}", curve[j]);
                }
                None => top_csv.push(','),
            }
        }
        top_csv.push('\n');
    }

    let mut cfg = cfg;
    cfg.segment_len = seg_len;
    prepare_out(&args.out, &cfg)?;
    atomic_write(
        &args.out.join("saliency.csv"),
        class_saliency_csv(&per_class, seg_len).as_bytes(),
    )?;
    atomic_write(&args.out.join("top-segment.csv"), top_csv.as_bytes())?;
    println!(
        "saliency over {} records ({}); wrote {}",
        data.len(),
        summary.join(", "),
        args.out.join("saliency.csv").display()
    );
    Ok(())
}
