//! Corpus manifests and raw record files.
//!
//! A corpus on disk is a directory holding one manifest plus one binary
//! file per record. The manifest is tab-separated text:
//!
//! ```text
//! ecgsl-manifest v1
//! classes<TAB>normal<TAB>afib          (optional, once)
//! rec000<TAB>rec000.f32<TAB>100<TAB>6000<TAB>0
//! rec001<TAB>rec001.f32<TAB>100<TAB>6000<TAB>-
//! ```
//!
//! Record files are raw little-endian 32-bit floats, nothing else; the
//! manifest's length column is the sample count and is checked against the
//! file size on read. `-` in the label column means unlabeled.

use super::atomic_write;
use crate::error::{Error, Result};
use crate::signal::RawRecord;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const MANIFEST_HEADER: &str = "ecgsl-manifest v1";

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub record_id: String,
    /// Relative to the manifest's directory.
    pub path: String,
    pub fs: f64,
    /// Sample count of the record file.
    pub length: usize,
    pub label: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    /// Directory the record paths resolve against.
    pub root: PathBuf,
    /// Optional class-name table; when present, labels index into it.
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            class_names: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn entry(&self, record_id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.record_id == record_id)
            .ok_or_else(|| Error::Manifest(format!("unknown record id '{record_id}'")))
    }

    /// Load one record's samples, verifying the file size against the
    /// manifest's length column.
    pub fn read_record(&self, record_id: &str) -> Result<RawRecord> {
        let entry = self.entry(record_id)?;
        let path = self.root.join(&entry.path);
        let bytes = std::fs::read(&path)?;
        if bytes.len() != entry.length * 4 {
            return Err(Error::Manifest(format!(
                "record '{record_id}': file {} holds {} samples, manifest says {}",
                path.display(),
                bytes.len() / 4,
                entry.length
            )));
        }
        let samples = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(RawRecord {
            samples,
            fs: entry.fs,
            record_id: entry.record_id.clone(),
            label: entry.label,
        })
    }

    /// All records in manifest order.
    pub fn read_all(&self) -> Result<Vec<RawRecord>> {
        self.entries
            .iter()
            .map(|e| self.read_record(&e.record_id))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.record_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate record id '{}'",
                    e.record_id
                )));
            }
            if e.record_id.is_empty() || e.record_id.contains(['\t', '\n']) {
                return Err(Error::Manifest(format!(
                    "record id {:?} is empty or contains tab/newline",
                    e.record_id
                )));
            }
            if !(e.fs > 0.0) {
                return Err(Error::Manifest(format!(
                    "record '{}': sampling rate must be positive, got {}",
                    e.record_id, e.fs
                )));
            }
            if let Some(label) = e.label {
                if !self.class_names.is_empty() && label >= self.class_names.len() {
                    return Err(Error::Manifest(format!(
                        "record '{}': label {label} out of range for {} classes",
                        e.record_id,
                        self.class_names.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parse and validate a manifest file. Every referenced record file must
/// exist; content lengths are checked lazily on [`Manifest::read_record`].
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    let root = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first.trim_end() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::Manifest(format!(
                "bad header {:?}, expected '{MANIFEST_HEADER}'",
                other.unwrap_or("")
            )))
        }
    }
    let mut manifest = Manifest::new(root);
    let mut saw_classes = false;
    for (lineno, line) in lines.enumerate() {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "classes" {
            if saw_classes {
                return Err(Error::Manifest("repeated classes line".into()));
            }
            saw_classes = true;
            manifest.class_names = fields[1..].iter().map(|s| s.to_string()).collect();
            if manifest.class_names.iter().any(|n| n.is_empty()) {
                return Err(Error::Manifest("empty class name".into()));
            }
            continue;
        }
        if fields.len() != 5 {
            return Err(Error::Manifest(format!(
                "line {}: expected 5 tab-separated fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let fs: f64 = fields[2].parse().map_err(|_| {
            Error::Manifest(format!("line {}: bad sampling rate '{}'", lineno + 2, fields[2]))
        })?;
        let length: usize = fields[3].parse().map_err(|_| {
            Error::Manifest(format!("line {}: bad length '{}'", lineno + 2, fields[3]))
        })?;
        let label = match fields[4] {
            "-" => None,
            s => Some(s.parse().map_err(|_| {
                Error::Manifest(format!("line {}: bad label '{s}'", lineno + 2))
            })?),
        };
        manifest.entries.push(ManifestEntry {
            record_id: fields[0].to_string(),
            path: fields[1].to_string(),
            fs,
            length,
            label,
        });
    }
    manifest.validate()?;
    for e in &manifest.entries {
        let p = manifest.root.join(&e.path);
        if !p.is_file() {
            return Err(Error::Manifest(format!(
                "record '{}': file {} does not exist",
                e.record_id,
                p.display()
            )));
        }
    }
    Ok(manifest)
}

/// Render and atomically write the manifest text.
pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    let mut text = String::from(MANIFEST_HEADER);
    text.push('\n');
    if !manifest.class_names.is_empty() {
        text.push_str("classes");
        for name in &manifest.class_names {
            let _ = write!(text, "\t{name}");
        }
        text.push('\n');
    }
    for e in &manifest.entries {
        let label = e.label.map_or("-".to_string(), |l| l.to_string());
        let _ = writeln!(text, "{}\t{}\t{}\t{}\t{label}", e.record_id, e.path, e.fs, e.length);
    }
    atomic_write(path, text.as_bytes())
}

/// Atomically write samples as raw little-endian f32.
pub fn write_record_file(path: &Path, samples: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(samples.len() * 4);
    for &v in samples {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}
