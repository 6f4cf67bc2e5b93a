use super::peaks::PeakList;
use super::RawRecord;
use crate::error::{Error, Result};

/// How a captured beat window is fitted to the fixed segment length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Replicate the window's first/last value (default).
    Edge,
    /// Pad with zeros.
    Zero,
    /// Linearly resample the window to the full length, destroying
    /// per-beat duration information (ablation mode).
    Stretch,
}

impl PadMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(Self::Edge),
            "zero" => Ok(Self::Zero),
            "stretch" => Ok(Self::Stretch),
            other => Err(Error::InvalidConfig(format!(
                "unknown pad mode '{other}' (expected edge, zero, or stretch)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Edge => "edge",
            Self::Zero => "zero",
            Self::Stretch => "stretch",
        }
    }
}

#[derive(Clone, Debug)]
pub struct SegmentationConfig {
    /// Fixed segment length in samples.
    pub seg_len: usize,
    /// Fraction of the preceding RR interval captured before the peak.
    pub pre_fraction: f64,
    /// Fraction of the following RR interval captured after the peak.
    pub post_fraction: f64,
    pub pad_mode: PadMode,
    /// Sampling rate the record is expected to be at.
    pub target_fs: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            seg_len: 100,
            pre_fraction: 0.35,
            post_fraction: 0.45,
            pad_mode: PadMode::Edge,
            target_fs: 100.0,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seg_len < 8 {
            return Err(Error::InvalidConfig(format!(
                "segment length {} below minimum of 8",
                self.seg_len
            )));
        }
        if self.pre_fraction < 0.0
            || self.post_fraction < 0.0
            || self.pre_fraction + self.post_fraction > 1.0
        {
            return Err(Error::InvalidConfig(
                "pre/post fractions must be non-negative and sum to at most 1".into(),
            ));
        }
        if !(self.target_fs > 0.0) {
            return Err(Error::InvalidConfig("target_fs must be positive".into()));
        }
        Ok(())
    }

    /// Peak anchor within a fitted segment; preserves the pre:post capture
    /// ratio, e.g. index 43 for a 100-sample segment.
    pub fn anchor(&self) -> usize {
        let ratio = self.pre_fraction / (self.pre_fraction + self.post_fraction);
        (ratio * (self.seg_len - 1) as f64).round() as usize
    }
}

/// One beat, min-max normalized and fitted to the configured length.
#[derive(Clone, Debug, PartialEq)]
pub struct HeartbeatSegment {
    pub values: Vec<f64>,
    /// Position of the R-peak inside `values`.
    pub peak_index: usize,
    /// Samples captured before the peak, prior to padding/truncation.
    pub pre_len: usize,
    /// Samples captured after the peak, prior to padding/truncation.
    pub post_len: usize,
    /// True when the source window was constant and normalization was
    /// undefined; such segments are all zeros.
    pub degenerate: bool,
}

impl HeartbeatSegment {
    pub fn zeros(seg_len: usize) -> Self {
        Self {
            values: vec![0.0; seg_len],
            peak_index: 0,
            pre_len: 0,
            post_len: 0,
            degenerate: false,
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Ordered beats of one record plus the padding mask (true = real beat).
#[derive(Clone, Debug)]
pub struct SegmentSequence {
    pub segments: Vec<HeartbeatSegment>,
    pub pad_mask: Vec<bool>,
    pub record_id: String,
    pub label: Option<usize>,
}

impl SegmentSequence {
    pub fn real_count(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

fn fit_window(
    window: &[f64],
    pre_len: usize,
    cfg: &SegmentationConfig,
    degenerate: bool,
) -> (Vec<f64>, usize) {
    let s = cfg.seg_len;
    let anchor = cfg.anchor();
    let post_len = window.len() - 1 - pre_len;
    match cfg.pad_mode {
        PadMode::Stretch => {
            let l = window.len();
            if l == s {
                return (window.to_vec(), pre_len);
            }
            let mut out = Vec::with_capacity(s);
            if l == 1 {
                out.resize(s, window[0]);
                return (out, 0);
            }
            for j in 0..s {
                let t = j as f64 * (l - 1) as f64 / (s - 1) as f64;
                let i0 = (t.floor() as usize).min(l - 1);
                let i1 = (i0 + 1).min(l - 1);
                let frac = t - i0 as f64;
                out.push(window[i0] + frac * (window[i1] - window[i0]));
            }
            let peak = (pre_len as f64 * (s - 1) as f64 / (l - 1) as f64).round() as usize;
            (out, peak.min(s - 1))
        }
        PadMode::Edge | PadMode::Zero => {
            let left_room = anchor;
            let right_room = s - 1 - anchor;
            // truncate from the outside where the window exceeds the room
            let take_left = pre_len.min(left_room);
            let take_right = post_len.min(right_room);
            let kept = &window[pre_len - take_left..=pre_len + take_right];
            let (left_fill, right_fill) = match cfg.pad_mode {
                PadMode::Edge if !degenerate => (kept[0], *kept.last().unwrap()),
                _ => (0.0, 0.0),
            };
            let mut out = Vec::with_capacity(s);
            out.resize(left_room - take_left, left_fill);
            out.extend_from_slice(kept);
            out.resize(s, right_fill);
            (out, anchor)
        }
    }
}

/// Split a record into per-beat segments. Each peak captures
/// `round(pre_fraction * RR_prev)` samples before and
/// `round(post_fraction * RR_next)` samples after itself (boundary peaks
/// substitute their one available neighbor interval), min-max normalizes
/// the window to [0,1], and fits it to the configured length.
pub fn segment(
    record: &RawRecord,
    peaks: &PeakList,
    cfg: &SegmentationConfig,
) -> Result<SegmentSequence> {
    record.validate()?;
    cfg.validate()?;
    let idx = peaks.indices();
    if idx.len() < 2 {
        return Err(Error::Segmentation(
            "need at least 2 peaks to derive RR intervals".into(),
        ));
    }
    let n = record.samples.len();
    let last = idx.len() - 1;
    let mut segments = Vec::with_capacity(idx.len());
    for (i, &p) in idx.iter().enumerate() {
        let rr_prev = if i == 0 { idx[1] - idx[0] } else { p - idx[i - 1] };
        let rr_next = if i == last {
            idx[last] - idx[last - 1]
        } else {
            idx[i + 1] - p
        };
        let pre = (cfg.pre_fraction * rr_prev as f64).round() as usize;
        let post = (cfg.post_fraction * rr_next as f64).round() as usize;
        let start = p.saturating_sub(pre);
        let end = (p + post).min(n - 1);
        let pre_len = p - start;
        let post_len = end - p;
        let window = &record.samples[start..=end];
        let mn = window.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let degenerate = mx <= mn;
        let normalized: Vec<f64> = if degenerate {
            vec![0.0; window.len()]
        } else {
            window.iter().map(|&v| (v - mn) / (mx - mn)).collect()
        };
        let (values, peak_index) = fit_window(&normalized, pre_len, cfg, degenerate);
        segments.push(HeartbeatSegment {
            values,
            peak_index,
            pre_len,
            post_len,
            degenerate,
        });
    }
    let pad_mask = vec![true; segments.len()];
    Ok(SegmentSequence {
        segments,
        pad_mask,
        record_id: record.record_id.clone(),
        label: record.label,
    })
}

/// Extend every sequence with all-zero segments to the batch maximum
/// length; the pad mask marks the padding false. Idempotent.
pub fn pad_sequences(batch: &mut [SegmentSequence]) {
    let max_n = batch.iter().map(|s| s.segments.len()).max().unwrap_or(0);
    let seg_len = batch
        .iter()
        .find_map(|s| s.segments.first().map(|seg| seg.values.len()));
    let Some(seg_len) = seg_len else { return };
    for seq in batch {
        while seq.segments.len() < max_n {
            seq.segments.push(HeartbeatSegment::zeros(seg_len));
            seq.pad_mask.push(false);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with_len(n: usize) -> RawRecord {
        // aperiodic but deterministic waveform, distinct values everywhere
        let samples = (0..n)
            .map(|i| (i as f64 * 0.7).sin() + 0.01 * i as f64)
            .collect();
        RawRecord::new(samples, 100.0, "seg-test", None).unwrap()
    }

    fn cfg(mode: PadMode) -> SegmentationConfig {
        SegmentationConfig {
            pad_mode: mode,
            ..SegmentationConfig::default()
        }
    }

    #[test]
    fn anchor_is_43_for_default_config() {
        assert_eq!(SegmentationConfig::default().anchor(), 43);
    }

    #[test]
    fn middle_peak_hand_example() {
        let record = record_with_len(400);
        let peaks = PeakList::new(vec![100, 200, 300], 400, 100.0).unwrap();
        let seq = segment(&record, &peaks, &cfg(PadMode::Edge)).unwrap();
        let seg = &seq.segments[1];
        // pre = round(0.35*100) = 35, post = round(0.45*100) = 45:
        // window = samples[165..=245], 81 samples, 8 left + 11 right pads
        assert_eq!(seg.pre_len, 35);
        assert_eq!(seg.post_len, 45);
        assert_eq!(seg.peak_index, 43);
        assert_eq!(seg.values.len(), 100);
        let win = &record.samples[165..=245];
        let mn = win.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: Vec<f64> = win.iter().map(|v| (v - mn) / (mx - mn)).collect();
        for j in 0..8 {
            assert_eq!(seg.values[j], norm[0], "left pad replicates first value");
        }
        assert_eq!(&seg.values[8..89], &norm[..], "window sits at offset 8");
        for j in 89..100 {
            assert_eq!(seg.values[j], norm[80], "right pad replicates last value");
        }
    }

    #[test]
    fn boundary_peaks_substitute_neighbor_interval() {
        let record = record_with_len(400);
        let peaks = PeakList::new(vec![100, 200, 300], 400, 100.0).unwrap();
        let seq = segment(&record, &peaks, &cfg(PadMode::Edge)).unwrap();
        assert_eq!(seq.segments[0].pre_len, 35, "first peak borrows RR_next");
        assert_eq!(seq.segments[2].post_len, 45, "last peak borrows RR_prev");
        assert_eq!(seq.segments.len(), 3, "segment count equals peak count");
    }

    #[test]
    fn oversized_window_truncates_about_anchor() {
        // RR = 160 -> pre = 56, post = 72, window length 129 > 100
        let record = record_with_len(800);
        let peaks = PeakList::new(vec![200, 360, 520], 800, 100.0).unwrap();
        let seq = segment(&record, &peaks, &cfg(PadMode::Edge)).unwrap();
        let seg = &seq.segments[1];
        assert_eq!(seg.pre_len, 56);
        assert_eq!(seg.post_len, 72);
        assert_eq!(seg.values.len(), 100);
        assert_eq!(seg.peak_index, 43);
        // anchor keeps 43 pre and 56 post samples of the raw window
        let win = &record.samples[360 - 43..=360 + 56];
        let full = &record.samples[360 - 56..=360 + 72];
        let mn = full.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = full.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expect: Vec<f64> = win.iter().map(|v| (v - mn) / (mx - mn)).collect();
        assert_eq!(seg.values, expect);
    }

    #[test]
    fn normalization_attains_zero_and_one() {
        let record = record_with_len(400);
        let peaks = PeakList::new(vec![100, 200, 300], 400, 100.0).unwrap();
        for mode in [PadMode::Edge, PadMode::Zero, PadMode::Stretch] {
            let seq = segment(&record, &peaks, &cfg(mode)).unwrap();
            for seg in &seq.segments {
                assert!(!seg.degenerate);
                let mn = seg.values.iter().cloned().fold(f64::INFINITY, f64::min);
                let mx = seg.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(mn >= 0.0 && mx <= 1.0, "values outside [0,1]");
                if mode != PadMode::Stretch {
                    assert_eq!(mn, 0.0, "min must be attained");
                    assert_eq!(mx, 1.0, "max must be attained");
                }
            }
        }
    }

    #[test]
    fn constant_window_is_degenerate_zeros() {
        let samples = vec![2.5; 400];
        let record = RawRecord::new(samples, 100.0, "const", None).unwrap();
        let peaks = PeakList::new(vec![100, 200, 300], 400, 100.0).unwrap();
        let seq = segment(&record, &peaks, &cfg(PadMode::Edge)).unwrap();
        for seg in &seq.segments {
            assert!(seg.degenerate);
            assert!(seg.is_all_zero());
        }
    }

    #[test]
    fn stretch_mode_fills_whole_segment() {
        let record = record_with_len(400);
        let peaks = PeakList::new(vec![100, 200, 300], 400, 100.0).unwrap();
        let seq = segment(&record, &peaks, &cfg(PadMode::Stretch)).unwrap();
        let seg = &seq.segments[1];
        // window of 81 samples stretched to 100: endpoints map exactly
        let win = &record.samples[165..=245];
        let mn = win.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((seg.values[0] - (win[0] - mn) / (mx - mn)).abs() < 1e-12);
        assert!((seg.values[99] - (win[80] - mn) / (mx - mn)).abs() < 1e-12);
        // peak maps proportionally: round(35 * 99 / 80) = 43
        assert_eq!(seg.peak_index, 43);
    }

    #[test]
    fn zero_mode_pads_with_zeros() {
        let record = record_with_len(400);
        let peaks = PeakList::new(vec![100, 200, 300], 400, 100.0).unwrap();
        let seq = segment(&record, &peaks, &cfg(PadMode::Zero)).unwrap();
        let seg = &seq.segments[1];
        for j in 0..8 {
            assert_eq!(seg.values[j], 0.0);
        }
        for j in 89..100 {
            assert_eq!(seg.values[j], 0.0);
        }
    }

    #[test]
    fn fewer_than_two_peaks_is_a_segmentation_error() {
        let record = record_with_len(400);
        let peaks = PeakList::new(vec![100], 400, 100.0).unwrap();
        let err = segment(&record, &peaks, &cfg(PadMode::Edge)).unwrap_err();
        assert_eq!(err.code(), "segment");
    }

    #[test]
    fn pad_sequences_equalizes_and_is_idempotent() {
        let record = record_with_len(700);
        let p1 = PeakList::new(vec![100, 200, 300], 700, 100.0).unwrap();
        let p2 = PeakList::new(vec![100, 200, 300, 400, 500], 700, 100.0).unwrap();
        let c = cfg(PadMode::Edge);
        let mut batch = vec![
            segment(&record, &p1, &c).unwrap(),
            segment(&record, &p2, &c).unwrap(),
        ];
        pad_sequences(&mut batch);
        assert_eq!(batch[0].segments.len(), 5);
        assert_eq!(batch[1].segments.len(), 5);
        assert_eq!(batch[0].real_count(), 3);
        assert_eq!(batch[1].real_count(), 5);
        assert!(batch[0].segments[3].is_all_zero());
        assert!(batch[0].segments[4].is_all_zero());
        let snapshot: Vec<usize> = batch.iter().map(|s| s.segments.len()).collect();
        pad_sequences(&mut batch);
        let again: Vec<usize> = batch.iter().map(|s| s.segments.len()).collect();
        assert_eq!(snapshot, again, "second padding pass must change nothing");
    }

    #[test]
    fn single_sequence_padding_is_a_no_op() {
        let record = record_with_len(400);
        let peaks = PeakList::new(vec![100, 200, 300], 400, 100.0).unwrap();
        let mut batch = vec![segment(&record, &peaks, &cfg(PadMode::Edge)).unwrap()];
        let before = batch[0].segments.len();
        pad_sequences(&mut batch);
        assert_eq!(batch[0].segments.len(), before);
    }
}
