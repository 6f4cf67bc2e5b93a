use super::RawRecord;
use crate::error::{Error, Result};
use std::f64::consts::PI;

/// One second-order section, denominator normalized to `a0 = 1`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Sos {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Band {
    Low,
    High,
}

/// Butterworth design via the bilinear transform of the analog prototype.
/// Sections are ordered with poles closest to the unit circle last, the
/// overall gain folded into the first section's numerator.
pub(crate) fn butter_sos(order: usize, fc: f64, fs: f64, band: Band) -> Result<Vec<Sos>> {
    if order == 0 {
        return Err(Error::InvalidConfig("filter order must be >= 1".into()));
    }
    if !(fc > 0.0) || fc >= fs / 2.0 {
        return Err(Error::InvalidConfig(format!(
            "cutoff {fc} Hz must lie in (0, fs/2) for fs = {fs} Hz"
        )));
    }
    let k = 2.0 * fs;
    let wc = k * (PI * fc / fs).tan(); // prewarped analog cutoff
    let mut secs: Vec<Sos> = Vec::with_capacity(order.div_ceil(2));
    let mut gain = 1.0;
    if order % 2 == 1 {
        // real prototype pole at s = -1
        let d0 = k + wc;
        let a1 = (wc - k) / d0;
        match band {
            Band::High => {
                secs.push(Sos {
                    b: [1.0, -1.0, 0.0],
                    a: [a1, 0.0],
                });
                gain *= k / d0;
            }
            Band::Low => {
                secs.push(Sos {
                    b: [1.0, 1.0, 0.0],
                    a: [a1, 0.0],
                });
                gain *= wc / d0;
            }
        }
    }
    // conjugate pole pairs; reverse index order sorts sections by
    // increasing pole radius after the transform
    for pair in (0..order / 2).rev() {
        let theta = PI * (2 * pair + order + 1) as f64 / (2 * order) as f64;
        let c1 = -2.0 * theta.cos();
        let d0 = k * k + c1 * wc * k + wc * wc;
        let a1 = (2.0 * wc * wc - 2.0 * k * k) / d0;
        let a2 = (k * k - c1 * wc * k + wc * wc) / d0;
        match band {
            Band::High => {
                secs.push(Sos {
                    b: [1.0, -2.0, 1.0],
                    a: [a1, a2],
                });
                gain *= k * k / d0;
            }
            Band::Low => {
                secs.push(Sos {
                    b: [1.0, 2.0, 1.0],
                    a: [a1, a2],
                });
                gain *= wc * wc / d0;
            }
        }
    }
    for b in &mut secs[0].b {
        *b *= gain;
    }
    Ok(secs)
}

/// One cascade pass in place. Each section starts from its step steady
/// state scaled by `x0` (the running DC level entering that section), which
/// suppresses startup transients the same way the reference tooling does.
fn sosfilt_pass(secs: &[Sos], x: &mut [f64], x0: f64) {
    let mut scale = 1.0;
    for s in secs {
        let [b0, b1, b2] = s.b;
        let [a1, a2] = s.a;
        let g = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2_unit = b2 - a2 * g;
        let z1_unit = b1 - a1 * g + z2_unit;
        let mut z1 = z1_unit * scale * x0;
        let mut z2 = z2_unit * scale * x0;
        for v in x.iter_mut() {
            let y = b0 * *v + z1;
            z1 = b1 * *v - a1 * y + z2;
            z2 = b2 * *v - a2 * y;
            *v = y;
        }
        scale *= g;
    }
}

/// Forward-backward (zero-phase) cascade with odd signal extension at both
/// ends. The effective magnitude response is the square of one pass.
pub(crate) fn sosfiltfilt(secs: &[Sos], x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    // effective tap count: first-order sections shorten the edge transient
    let zero_b2 = secs.iter().filter(|s| s.b[2] == 0.0).count();
    let zero_a2 = secs.iter().filter(|s| s.a[1] == 0.0).count();
    let ntaps = 2 * secs.len() + 1 - zero_b2.min(zero_a2);
    if n <= 3 * ntaps {
        return Err(Error::Data(format!(
            "signal of {n} samples is too short for zero-phase filtering (needs > {})",
            3 * ntaps
        )));
    }
    // Pad far enough that the slowest pole's transient decays to 1e-7;
    // near-DC cutoffs need much more than a few filter lengths.
    let pmax = secs
        .iter()
        .map(|s| if s.a[1] > 0.0 { s.a[1].sqrt() } else { s.a[0].abs() })
        .fold(0.0_f64, f64::max);
    let decay = if pmax > 0.0 && pmax < 1.0 {
        ((1e-7_f64.ln() / pmax.ln()).ceil()) as usize
    } else {
        0
    };
    let padlen = (3 * ntaps).max(decay).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    for i in (1..=padlen).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=padlen {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let x0 = ext[0];
    sosfilt_pass(secs, &mut ext, x0);
    ext.reverse();
    let x0 = ext[0];
    sosfilt_pass(secs, &mut ext, x0);
    ext.reverse();
    Ok(ext[padlen..padlen + n].to_vec())
}

/// Zero-phase order-5 Butterworth high-pass; removes baseline wander below
/// `cutoff` without shifting fiducial points.
pub fn highpass_filter(record: &RawRecord, cutoff: f64) -> Result<RawRecord> {
    record.validate()?;
    if cutoff >= record.fs / 2.0 {
        return Err(Error::InvalidConfig(format!(
            "high-pass cutoff {cutoff} Hz must be below Nyquist ({} Hz)",
            record.fs / 2.0
        )));
    }
    let secs = butter_sos(5, cutoff, record.fs, Band::High)?;
    let samples = sosfiltfilt(&secs, &record.samples)?;
    Ok(record.with_samples(samples, record.fs))
}

/// Trailing moving average sized to one powerline period:
/// `w = max(1, round(fs / powerline))`. Missing history before the first
/// sample is replicated from it, so output length equals input length.
pub fn powerline_smooth(record: &RawRecord, powerline: f64) -> Result<RawRecord> {
    record.validate()?;
    if !(powerline > 0.0) {
        return Err(Error::InvalidConfig(
            "powerline frequency must be positive".into(),
        ));
    }
    let w = ((record.fs / powerline).round() as usize).max(1);
    let x = &record.samples;
    let mut out = Vec::with_capacity(x.len());
    let mut acc = x[0] * w as f64;
    for i in 0..x.len() {
        acc += x[i] - if i >= w { x[i - w] } else { x[0] };
        out.push(acc / w as f64);
    }
    Ok(record.with_samples(out, record.fs))
}

/// Linear-interpolation resampling onto a uniform grid at `target_fs`.
/// Output length is `floor((len - 1) * target_fs / fs) + 1`.
pub fn resample(record: &RawRecord, target_fs: f64) -> Result<RawRecord> {
    record.validate()?;
    if !(target_fs > 0.0) || !target_fs.is_finite() {
        return Err(Error::InvalidConfig(
            "target sampling rate must be positive".into(),
        ));
    }
    let x = &record.samples;
    let n = x.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "record '{}' has a single sample; cannot resample",
            record.record_id
        )));
    }
    let out_len = ((n - 1) as f64 * target_fs / record.fs).floor() as usize + 1;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let t = i as f64 * record.fs / target_fs;
        let i0 = (t.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let frac = t - i0 as f64;
        out.push(x[i0] + frac * (x[i1] - x[i0]));
    }
    Ok(record.with_samples(out, target_fs))
}
