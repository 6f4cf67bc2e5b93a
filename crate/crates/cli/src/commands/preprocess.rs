use super::prepare_out;
use crate::args::PreprocessArgs;
use crate::config::RunConfig;
use ecgsl_core::error::Result;
use ecgsl_core::io::{atomic_write, load_manifest, write_segments};
use ecgsl_core::signal::{
    detect_r_peaks, pad_sequences, preprocess, segment, PadMode, SegmentSequence,
};
use ecgsl_core::{par, Error};
use std::fmt::Write as _;

enum Outcome {
    Done(SegmentSequence),
    Skipped(String, String),
}

/// Condition every record (high-pass, powerline smoothing, resampling),
/// detect R-peaks, cut beat segments, pad sequences to a common length,
/// and write the segment corpus. Records without enough peaks are skipped
/// and listed in the log rather than failing the run.
pub fn run(args: &PreprocessArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(mode) = &args.pad_mode {
        cfg.pad_mode = PadMode::parse(mode)?;
    }
    if let Some(v) = args.segment_len {
        cfg.segment_len = v;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    let seg_cfg = cfg.segmentation();
    seg_cfg.validate()?;

    let manifest = load_manifest(&args.input)?;
    let records = manifest.read_all()?;

    let per_record = |i: usize| -> Result<Outcome> {
        let raw = &records[i];
        let conditioned = preprocess(raw, cfg.highpass_hz, cfg.powerline_hz, cfg.target_fs)?;
        let peaks = match detect_r_peaks(&conditioned) {
            Ok(p) if p.len() >= 2 => p,
            Ok(p) => {
                return Ok(Outcome::Skipped(
                    raw.record_id.clone(),
                    format!("only {} peak(s) detected", p.len()),
                ))
            }
            Err(Error::EmptyPeaks) => {
                return Ok(Outcome::Skipped(raw.record_id.clone(), "no peaks detected".into()))
            }
            Err(e) => return Err(e),
        };
        Ok(Outcome::Done(segment(&conditioned, &peaks, &seg_cfg)?))
    };
    let outcomes: Vec<Result<Outcome>> = if cfg.workers == 1 {
        (0..records.len()).map(per_record).collect()
    } else {
        par::map_collect(records.len(), per_record)
    };

    let mut corpus = Vec::new();
    let mut log = String::new();
    let mut skipped = 0usize;
    for outcome in outcomes {
        match outcome? {
            Outcome::Done(seq) => {
                let _ = writeln!(log, "{}\tsegments\t{}", seq.record_id, seq.segments.len());
                corpus.push(seq);
            }
            Outcome::Skipped(id, why) => {
                let _ = writeln!(log, "{id}\tskipped\t{why}");
                skipped += 1;
            }
        }
    }
    if corpus.is_empty() {
        return Err(Error::InvalidDataset(
            "no record yielded at least 2 peaks; nothing to segment".into(),
        ));
    }
    pad_sequences(&mut corpus);

    prepare_out(&args.out, &cfg)?;
    write_segments(&args.out.join("corpus.seg"), &corpus, cfg.segment_len)?;
    atomic_write(&args.out.join("preprocess-log.txt"), log.as_bytes())?;

    let beats: usize = corpus.iter().map(|s| s.real_count()).sum();
    println!(
        "segmented {} of {} records ({} beats, {} skipped, pad-mode {}) into {}",
        corpus.len(),
        records.len(),
        beats,
        skipped,
        cfg.pad_mode.name(),
        args.out.display()
    );
    Ok(())
}
