//! On-disk formats (manifests, raw records, segment corpora, checkpoints)
//! and the deterministic synthetic ECG generator. All writes go through a
//! temp-file-then-rename so interrupted runs never leave a readable
//! half-written artifact.

mod checkpoint;
mod manifest;
mod segments;
mod synth;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use manifest::{
    load_manifest, write_manifest, write_record_file, Manifest, ManifestEntry, MANIFEST_HEADER,
};
pub use segments::{read_segments, write_segments, SEGMENTS_HEADER};
pub use synth::{match_peaks, synth_ecg, SynthConfig, SynthRecord};

use crate::error::Result;
use std::path::Path;

/// Write `bytes` to a sibling temp file, then rename over `path`. Readers
/// either see the old complete file or the new complete file, never a
/// partial one.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
