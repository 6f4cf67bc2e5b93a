//! Gradient saliency: how strongly each input sample of each heartbeat
//! influences the predicted-class logit, plus class-averaged summaries for
//! plotting.
//!
//! Saliency is `|d logit_c / d input|` for the predicted class `c`,
//! differentiated through the full sequence model in eval mode. The logit
//! (not the softmax probability) is differentiated, and magnitudes rather
//! than signed gradients are reported.

use crate::error::{Error, Result};
use crate::model::{bind, segments_tensor, sequence_logits, ModelState};
use crate::signal::SegmentSequence;
use crate::tensor::{Tape, TensorData};
use std::fmt::Write as _;

/// Per-sample gradient magnitudes aligned with one record's segments.
#[derive(Clone, Debug)]
pub struct SaliencyMap {
    /// `[N, S]`, same shape as the input segment array; all values >= 0.
    pub values: TensorData<f32>,
    pub predicted: usize,
    pub record_id: String,
}

/// Saliency of the predicted class with respect to every input sample of
/// `seq`. Padding segments get exactly zero saliency.
pub fn input_saliency(state: &ModelState, seq: &SegmentSequence) -> Result<SaliencyMap> {
    let cfg = &state.config;
    let mut tape = Tape::<f32>::new();
    let binding = bind(&mut tape, &state.params, false)?;
    let x = tape.leaf(segments_tensor::<f32>(seq, cfg.seg_len)?, true)?;
    let logits = sequence_logits(&mut tape, &binding, cfg, x, &seq.pad_mask, None)?;
    let row = tape.value(logits).data();
    let mut predicted = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[predicted] {
            predicted = i;
        }
    }
    let target = tape.slice_cols(logits, predicted, 1)?;
    tape.backward(target)?;
    let grad = tape
        .grad(x)
        .ok_or_else(|| Error::InvalidState("input gradient missing after backward".into()))?;
    let values = TensorData::new(
        vec![seq.segments.len(), cfg.seg_len],
        grad.iter().map(|g| g.abs()).collect(),
    )?;
    Ok(SaliencyMap {
        values,
        predicted,
        record_id: seq.record_id.clone(),
    })
}

/// Mean heartbeat and mean saliency at each of the S positions, over every
/// real segment of every record predicted as class `class`. Returns
/// `(mean_segment, mean_saliency, segment_count)`.
pub fn class_average_saliency(
    state: &ModelState,
    data: &[SegmentSequence],
    class: usize,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let s = state.config.seg_len;
    let mut seg_sum = vec![0.0f64; s];
    let mut sal_sum = vec![0.0f64; s];
    let mut count = 0usize;
    for seq in data {
        let map = input_saliency(state, seq)?;
        if map.predicted != class {
            continue;
        }
        for (i, seg) in seq.segments.iter().enumerate() {
            if !seq.pad_mask[i] {
                continue;
            }
            let sal_row = &map.values.data()[i * s..(i + 1) * s];
            for j in 0..s {
                seg_sum[j] += seg.values[j];
                sal_sum[j] += sal_row[j] as f64;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyClass(class));
    }
    for j in 0..s {
        seg_sum[j] /= count as f64;
        sal_sum[j] /= count as f64;
    }
    Ok((seg_sum, sal_sum, count))
}

/// Index of the real segment with the largest summed saliency; ties go to
/// the lowest index.
fn max_saliency_row(map: &SaliencyMap, pad_mask: &[bool], s: usize) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for i in 0..pad_mask.len() {
        if !pad_mask[i] {
            continue;
        }
        let total: f32 = map.values.data()[i * s..(i + 1) * s].iter().sum();
        match best {
            Some((_, b)) if total <= b => {}
            _ => best = Some((i, total)),
        }
    }
    best.map(|(i, _)| i)
}

/// For each record predicted as `class`, take its single most salient real
/// heartbeat; return the positionwise mean of those heartbeats.
pub fn highest_saliency_segment(
    state: &ModelState,
    data: &[SegmentSequence],
    class: usize,
) -> Result<Vec<f64>> {
    let s = state.config.seg_len;
    let mut sum = vec![0.0f64; s];
    let mut records = 0usize;
    for seq in data {
        let map = input_saliency(state, seq)?;
        if map.predicted != class {
            continue;
        }
        let Some(row) = max_saliency_row(&map, &seq.pad_mask, s) else {
            continue;
        };
        for j in 0..s {
            sum[j] += seq.segments[row].values[j];
        }
        records += 1;
    }
    if records == 0 {
        return Err(Error::EmptyClass(class));
    }
    for v in &mut sum {
        *v /= records as f64;
    }
    Ok(sum)
}

/// CSV of class-averaged curves: one row per sample position, a
/// `(segment, saliency)` column pair per class. Classes with no predicted
/// samples render empty cells.
pub fn class_saliency_csv(per_class: &[Option<(Vec<f64>, Vec<f64>)>], seg_len: usize) -> String {
    let mut out = String::from("pos");
    for c in 0..per_class.len() {
        let _ = write!(out, ",class{c}_segment,class{c}_saliency");
    }
    out.push('\n');
    for j in 0..seg_len {
        let _ = write!(out, "{j}");
        for entry in per_class {
            match entry {
                Some((seg, sal)) => {
                    let _ = write!(out, ",{},{}", seg[j], sal[j]);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}
