use super::filter::{butter_sos, sosfiltfilt, Band};
use super::RawRecord;
use crate::error::{Error, Result};

/// Strictly increasing R-peak sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeakList {
    indices: Vec<usize>,
}

impl PeakList {
    /// Validates ordering, bounds, and the 0.2 s refractory gap.
    pub fn new(indices: Vec<usize>, record_len: usize, fs: f64) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyPeaks);
        }
        let refractory = (0.2 * fs) as usize;
        for w in indices.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Data("peak indices must be strictly increasing".into()));
            }
            if w[1] - w[0] < refractory {
                return Err(Error::Data(format!(
                    "peaks {} and {} violate the {refractory}-sample refractory gap",
                    w[0], w[1]
                )));
            }
        }
        if *indices.last().unwrap() >= record_len {
            return Err(Error::Data("peak index beyond record end".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// QRS energy envelope: band-limit to 5-15 Hz, differentiate, square,
/// then integrate over a centered 150 ms window. Zero-phase filtering and
/// the centered window keep the envelope maximum aligned with the R wave.
fn energy_envelope(record: &RawRecord) -> Result<(Vec<f64>, Vec<f64>)> {
    let fs = record.fs;
    let hp = butter_sos(2, 5.0, fs, Band::High)?;
    let lp = butter_sos(2, 15.0, fs, Band::Low)?;
    let band = sosfiltfilt(&lp, &sosfiltfilt(&hp, &record.samples)?)?;
    let n = band.len();
    // five-point derivative, history replicated at the left edge
    let at = |i: isize| band[i.clamp(0, n as isize - 1) as usize];
    let mut deriv = Vec::with_capacity(n);
    for i in 0..n as isize {
        deriv.push((2.0 * at(i) + at(i - 1) - at(i - 3) - 2.0 * at(i - 4)) / 8.0);
    }
    let sq: Vec<f64> = deriv.iter().map(|d| d * d).collect();
    let half = ((0.150 * fs).round() as usize / 2).max(1);
    let mut mwi = Vec::with_capacity(n);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let s: f64 = sq[lo..=hi].iter().sum();
        mwi.push(s / (hi - lo + 1) as f64);
    }
    Ok((band, mwi))
}

fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.0 {
            out.push(i);
        }
    }
    out
}

/// Adaptive-threshold QRS detection in the style of the classic two-level
/// running-estimate scheme, with search-back over long RR gaps and final
/// refinement to the band-passed local maximum within +/-50 ms.
pub fn detect_r_peaks(record: &RawRecord) -> Result<PeakList> {
    record.validate()?;
    let fs = record.fs;
    if record.duration_secs() < 2.0 {
        return Err(Error::Data(format!(
            "record '{}' is shorter than 2 s; too short for peak detection",
            record.record_id
        )));
    }
    let (band, mwi) = energy_envelope(record)?;
    let n = mwi.len();
    let refractory = (0.2 * fs) as usize;
    let candidates = local_maxima(&mwi);
    if candidates.is_empty() {
        return Err(Error::EmptyPeaks);
    }

    // learning phase: first two seconds seed the signal/noise levels
    let learn = ((2.0 * fs) as usize).min(n);
    let learn_max = mwi[..learn].iter().cloned().fold(0.0_f64, f64::max);
    let learn_mean = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let mut spki = 0.25 * learn_max;
    let mut npki = 0.5 * learn_mean;

    let mut accepted: Vec<usize> = Vec::new();
    for &c in &candidates {
        let pk = mwi[c];
        if let Some(&last) = accepted.last() {
            if c - last < refractory {
                continue;
            }
        }
        let threshold = npki + 0.25 * (spki - npki);
        if pk > threshold {
            accepted.push(c);
            spki = 0.125 * pk + 0.875 * spki;
        } else {
            npki = 0.125 * pk + 0.875 * npki;
        }
    }

    // search-back: re-examine long gaps at half threshold
    let threshold = npki + 0.25 * (spki - npki);
    if accepted.len() >= 2 {
        let rrs: Vec<usize> = accepted.windows(2).map(|w| w[1] - w[0]).collect();
        let avg_rr = rrs.iter().sum::<usize>() as f64 / rrs.len() as f64;
        let mut gaps: Vec<(usize, usize)> = accepted.windows(2).map(|w| (w[0], w[1])).collect();
        let mut rescued: Vec<usize> = Vec::new();
        while let Some((a, b)) = gaps.pop() {
            if (b - a) as f64 <= 1.66 * avg_rr {
                continue;
            }
            let best = candidates
                .iter()
                .filter(|&&c| c >= a + refractory && b >= c + refractory)
                .filter(|&&c| mwi[c] > 0.5 * threshold)
                .max_by(|&&x, &&y| mwi[x].total_cmp(&mwi[y]));
            if let Some(&c) = best {
                rescued.push(c);
                gaps.push((a, c));
                gaps.push((c, b));
            }
        }
        accepted.extend(rescued);
        accepted.sort_unstable();
    }

    // refine each detection to the band-passed local maximum within 50 ms
    let win = (0.05 * fs).round() as usize;
    let mut refined: Vec<usize> = accepted
        .iter()
        .map(|&c| {
            let lo = c.saturating_sub(win);
            let hi = (c + win).min(n - 1);
            (lo..=hi)
                .max_by(|&x, &y| band[x].total_cmp(&band[y]))
                .unwrap_or(c)
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();

    // refinement can pull neighbors together; keep the stronger of any pair
    // closer than the refractory gap
    let mut kept: Vec<usize> = Vec::with_capacity(refined.len());
    for idx in refined {
        match kept.last() {
            Some(&prev) if idx - prev < refractory => {
                if band[idx] > band[prev] {
                    *kept.last_mut().unwrap() = idx;
                }
            }
            _ => kept.push(idx),
        }
    }

    PeakList::new(kept, record.samples.len(), fs)
}
