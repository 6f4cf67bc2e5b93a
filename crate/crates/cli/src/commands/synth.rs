use super::prepare_out;
use crate::args::SynthArgs;
use crate::config::RunConfig;
use ecgsl_core::error::Result;
use ecgsl_core::io::{atomic_write, synth_ecg, write_manifest, write_record_file, Manifest, ManifestEntry};
use std::fmt::Write as _;

/// Generate a corpus: record files, manifest, ground-truth peak list, and
/// the config snapshot. Fully deterministic for a given resolved config.
pub fn run(args: &SynthArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(v) = args.records {
        cfg.records = v;
    }
    if let Some(v) = args.classes {
        cfg.classes = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.snr {
        cfg.snr = v;
    }
    if let Some(v) = args.hr_range {
        cfg.hr_range = v;
    }
    if let Some(v) = args.duration {
        cfg.duration = v;
    }

    let records = synth_ecg(&cfg.synth_config())?;
    prepare_out(&args.out, &cfg)?;

    let mut manifest = Manifest::new(&args.out);
    manifest.class_names = (0..cfg.classes).map(|c| format!("class{c}")).collect();
    let mut peaks_text = String::new();
    for rec in &records {
        let rel = format!("{}.f32", rec.record.record_id);
        write_record_file(&args.out.join(&rel), &rec.record.samples)?;
        manifest.entries.push(ManifestEntry {
            record_id: rec.record.record_id.clone(),
            path: rel,
            fs: rec.record.fs,
            length: rec.record.samples.len(),
            label: rec.record.label,
        });
        let joined: Vec<String> = rec.true_peaks.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(peaks_text, "{}\t{}", rec.record.record_id, joined.join(","));
    }
    write_manifest(&manifest, &args.out.join("manifest.tsv"))?;
    atomic_write(&args.out.join("peaks.txt"), peaks_text.as_bytes())?;

    println!(
        "wrote {} records ({} classes, {} s at {} Hz) to {}",
        records.len(),
        cfg.classes,
        cfg.duration,
        cfg.target_fs,
        args.out.display()
    );
    Ok(())
}
