//! Raw ECG conditioning and heartbeat segmentation: high-pass baseline
//! removal, powerline smoothing, resampling to a common rate, R-peak
//! detection, and per-beat fixed-length segment extraction.

mod filter;
mod peaks;
mod segment;

pub use filter::{highpass_filter, powerline_smooth, resample};
pub use peaks::{detect_r_peaks, PeakList};
pub use segment::{
    pad_sequences, segment, HeartbeatSegment, PadMode, SegmentSequence, SegmentationConfig,
};

use crate::error::{Error, Result};

/// Single-lead ECG trace with its sampling rate.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub record_id: String,
    pub label: Option<usize>,
}

impl RawRecord {
    pub fn new(
        samples: Vec<f64>,
        fs: f64,
        record_id: impl Into<String>,
        label: Option<usize>,
    ) -> Result<Self> {
        let record = Self {
            samples,
            fs,
            record_id: record_id.into(),
            label,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Data(format!(
                "record '{}' has no samples",
                self.record_id
            )));
        }
        if !(self.fs > 0.0) || !self.fs.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "record '{}' has invalid sampling rate {}",
                self.record_id, self.fs
            )));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "record '{}' contains non-finite samples",
                self.record_id
            )));
        }
        Ok(())
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }

    /// Same identity, new samples (and optionally a new rate).
    fn with_samples(&self, samples: Vec<f64>, fs: f64) -> Self {
        Self {
            samples,
            fs,
            record_id: self.record_id.clone(),
            label: self.label,
        }
    }
}

/// Full conditioning chain: high-pass at `highpass_hz`, powerline moving
/// average, then resample to `cfg`-agreed `target_fs`.
pub fn preprocess(
    record: &RawRecord,
    highpass_hz: f64,
    powerline_hz: f64,
    target_fs: f64,
) -> Result<RawRecord> {
    let r = highpass_filter(record, highpass_hz)?;
    let r = powerline_smooth(&r, powerline_hz)?;
    resample(&r, target_fs)
}
