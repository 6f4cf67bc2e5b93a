//! Two-stage self-supervised pre-training plus supervised fine-tuning.
//!
//! Stage one trains the structural encoder/decoder as a per-segment
//! autoencoder. Stage two zeroes a random subset of each record's segments
//! and trains the full sequence model to reconstruct the hidden ones from
//! context. Fine-tuning then optimizes the classification head (and
//! everything under it) with cross-entropy.

mod adam;
mod mask;

pub use adam::{Adam, AdamConfig};
pub use mask::select_mask;

use crate::error::{Error, Result};
use crate::model::{
    bind, decode_embeddings, encode_segments, segments_tensor, sequence_hidden,
    sequence_logits, Binding, ModelState, ParamSet,
};
use crate::signal::SegmentSequence;
use crate::tensor::{Tape, TensorData, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// RNG stream ids so each random purpose draws independently of the others.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of real segments hidden per record in the masked stage.
    pub mask_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for both pre-training stages.
    pub fn pretrain() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 1e-4,
            mask_fraction: 0.1,
            seed: 0,
        }
    }

    /// Defaults for supervised fine-tuning.
    pub fn finetune() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr: 5e-4,
            mask_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::InvalidConfig(format!(
                "mask fraction must be in [0, 1], got {}",
                self.mask_fraction
            )));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    /// Stage-dependent: fine-tuning reports the evaluation score when an
    /// evaluator is supplied, pre-training stages report nothing.
    pub metric: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch worth keeping: the highest metric when any epoch
    /// recorded one, otherwise the last epoch. Ties go to the earlier epoch.
    pub best_epoch: usize,
    /// Optimizer step counter after the last update, for resumable
    /// checkpoints.
    pub final_step: u64,
    /// Adam moment buffers (name, m, v) in parameter order after the last
    /// update.
    pub final_moments: Vec<(String, Vec<f32>, Vec<f32>)>,
}

impl TrainReport {
    fn build(history: Vec<EpochRecord>, opt: &Adam, params: &ParamSet) -> Self {
        let mut best = history.len().max(1);
        let mut best_metric = f64::NEG_INFINITY;
        let mut saw_metric = false;
        for rec in &history {
            if let Some(m) = rec.metric {
                if !saw_metric || m > best_metric {
                    best_metric = m;
                    best = rec.epoch;
                }
                saw_metric = true;
            }
        }
        let final_moments = opt
            .moments(params)
            .map(|(name, m, v)| (name.to_string(), m.to_vec(), v.to_vec()))
            .collect();
        Self {
            history,
            best_epoch: best,
            final_step: opt.step_count(),
            final_moments,
        }
    }

    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Every real (non-padding) segment across the corpus as a `[N, S]` matrix.
fn real_segment_matrix(data: &[SegmentSequence], seg_len: usize) -> Result<TensorData<f32>> {
    let mut rows: Vec<f32> = Vec::new();
    let mut n = 0;
    for seq in data {
        for (i, seg) in seq.segments.iter().enumerate() {
            if !seq.pad_mask[i] {
                continue;
            }
            if seg.values.len() != seg_len {
                return Err(Error::Shape(format!(
                    "record {} segment {i} has {} samples, expected {seg_len}",
                    seq.record_id,
                    seg.values.len()
                )));
            }
            rows.extend(seg.values.iter().map(|&v| v as f32));
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("no segments to train on".into()));
    }
    TensorData::new(vec![n, seg_len], rows)
}

fn collect_grads(
    tape: &Tape<f32>,
    binding: &Binding,
    state: &ModelState,
) -> Result<Vec<(String, Vec<f32>)>> {
    let mut grads = Vec::new();
    for name in state.params.names() {
        let var = binding.var(name)?;
        if let Some(g) = tape.grad(var) {
            grads.push((name.to_string(), g.to_vec()));
        }
    }
    Ok(grads)
}

/// Stage one: train encoder + decoder to reproduce individual segments.
/// The loss is mean squared error over each batch of segments.
pub fn pretrain_autoencoder(
    state: &mut ModelState,
    data: &[SegmentSequence],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let seg_len = state.config.seg_len;
    let all = real_segment_matrix(data, seg_len)?;
    let n = all.shape()[0];
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut shuffle_rng = cfg.rng(STREAM_SHUFFLE);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch = Vec::with_capacity(chunk.len() * seg_len);
            for &i in chunk {
                batch.extend_from_slice(&all.data()[i * seg_len..(i + 1) * seg_len]);
            }
            let batch = TensorData::new(vec![chunk.len(), seg_len], batch)?;

            let mut tape = Tape::<f32>::new();
            let binding = bind(&mut tape, &state.params, true)?;
            let x = tape.constant(batch)?;
            let e = encode_segments(&mut tape, &binding, &state.config, x)?;
            let r = decode_embeddings(&mut tape, &binding, &state.config, e)?;
            let loss = tape.masked_mse(r, x, &vec![true; chunk.len()])?;
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &binding, state)?;
            opt.step(&mut state.params, &grads)?;
            loss_sum += tape.value(loss).item() as f64 * chunk.len() as f64;
        }
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / n as f64,
            metric: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainReport::build(history, &opt, &state.params))
}

/// Reconstruction loss of the current model on every real segment, without
/// updating anything. Useful as a before/after measure.
pub fn autoencoder_loss(state: &ModelState, data: &[SegmentSequence]) -> Result<f64> {
    let seg_len = state.config.seg_len;
    let all = real_segment_matrix(data, seg_len)?;
    let n = all.shape()[0];
    let mut tape = Tape::<f32>::new();
    let binding = bind(&mut tape, &state.params, false)?;
    let x = tape.constant(all)?;
    let e = encode_segments(&mut tape, &binding, &state.config, x)?;
    let r = decode_embeddings(&mut tape, &binding, &state.config, e)?;
    let loss = tape.masked_mse(r, x, &vec![true; n])?;
    Ok(tape.value(loss).item() as f64)
}

/// Build the masked input for one sequence: rows listed in `hidden` are
/// zeroed, everything else copied through.
fn masked_input(
    original: &TensorData<f32>,
    hidden: &[usize],
    seg_len: usize,
) -> Result<TensorData<f32>> {
    let mut data = original.data().to_vec();
    for &row in hidden {
        for v in &mut data[row * seg_len..(row + 1) * seg_len] {
            *v = 0.0;
        }
    }
    TensorData::new(original.shape().to_vec(), data)
}

/// Stage two: zero out a fraction of each record's segments and train the
/// full sequence model to reconstruct exactly those from the surrounding
/// beats. Loss is averaged per record, then over the batch.
pub fn pretrain_masked(
    state: &mut ModelState,
    data: &[SegmentSequence],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no sequences to train on".into()));
    }
    let seg_len = state.config.seg_len;
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut shuffle_rng = cfg.rng(STREAM_SHUFFLE);
    let mut mask_rng = cfg.rng(STREAM_MASK);
    let mut dropout_rng = cfg.rng(STREAM_DROPOUT);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::<f32>::new();
            let binding = bind(&mut tape, &state.params, true)?;
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let seq = &data[i];
                let original = segments_tensor::<f32>(seq, seg_len)?;
                let hidden_rows = select_mask(&mut mask_rng, seq.real_count(), cfg.mask_fraction)?;
                let masked = masked_input(&original, &hidden_rows, seg_len)?;
                let mut loss_mask = vec![false; seq.segments.len()];
                for &r in &hidden_rows {
                    loss_mask[r] = true;
                }

                let x = tape.constant(masked)?;
                let h = sequence_hidden(
                    &mut tape,
                    &binding,
                    &state.config,
                    x,
                    &seq.pad_mask,
                    Some(&mut dropout_rng),
                )?;
                let r = decode_embeddings(&mut tape, &binding, &state.config, h)?;
                let target = tape.constant(original)?;
                losses.push(tape.masked_mse(r, target, &loss_mask)?);
            }
            let total = tape.add_n(&losses)?;
            let loss = tape.scale(total, 1.0 / chunk.len() as f64)?;
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &binding, state)?;
            opt.step(&mut state.params, &grads)?;
            loss_sum += tape.value(loss).item() as f64 * chunk.len() as f64;
        }
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            metric: None,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainReport::build(history, &opt, &state.params))
}

/// Masked-reconstruction loss at fixed weights, averaged over the corpus
/// with a fixed mask seed. No dropout, no updates.
pub fn masked_loss(state: &ModelState, data: &[SegmentSequence], cfg: &TrainConfig) -> Result<f64> {
    cfg.validate()?;
    let seg_len = state.config.seg_len;
    let mut mask_rng = cfg.rng(STREAM_MASK);
    let mut total = 0.0;
    for seq in data {
        let original = segments_tensor::<f32>(seq, seg_len)?;
        let hidden_rows = select_mask(&mut mask_rng, seq.real_count(), cfg.mask_fraction)?;
        let masked = masked_input(&original, &hidden_rows, seg_len)?;
        let mut loss_mask = vec![false; seq.segments.len()];
        for &r in &hidden_rows {
            loss_mask[r] = true;
        }
        let mut tape = Tape::<f32>::new();
        let binding = bind(&mut tape, &state.params, false)?;
        let x = tape.constant(masked)?;
        let h = sequence_hidden(&mut tape, &binding, &state.config, x, &seq.pad_mask, None)?;
        let r = decode_embeddings(&mut tape, &binding, &state.config, h)?;
        let target = tape.constant(original)?;
        let loss = tape.masked_mse(r, target, &loss_mask)?;
        total += tape.value(loss).item() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Supervised fine-tuning with cross-entropy over record labels.
///
/// `epoch_metric`, when given, runs after every epoch (e.g. held-out macro
/// F1) and lands in the history's metric column.
pub fn finetune(
    state: &mut ModelState,
    data: &[SegmentSequence],
    cfg: &TrainConfig,
    mut epoch_metric: Option<&mut dyn FnMut(&ModelState) -> Result<f64>>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("no sequences to train on".into()));
    }
    let mut labels = Vec::with_capacity(data.len());
    for seq in data {
        match seq.label {
            Some(l) if l < state.config.classes => labels.push(l),
            Some(l) => {
                return Err(Error::Data(format!(
                    "record {} has label {l}, model expects fewer than {} classes",
                    seq.record_id, state.config.classes
                )))
            }
            None => {
                return Err(Error::Data(format!(
                    "record {} has no label; fine-tuning needs labeled data",
                    seq.record_id
                )))
            }
        }
    }
    let seg_len = state.config.seg_len;
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr))?;
    let mut shuffle_rng = cfg.rng(STREAM_SHUFFLE);
    let mut dropout_rng = cfg.rng(STREAM_DROPOUT);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::<f32>::new();
            let binding = bind(&mut tape, &state.params, true)?;
            let mut rows: Vec<Var> = Vec::with_capacity(chunk.len());
            let mut batch_labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let seq = &data[i];
                let x = tape.constant(segments_tensor::<f32>(seq, seg_len)?)?;
                rows.push(sequence_logits(
                    &mut tape,
                    &binding,
                    &state.config,
                    x,
                    &seq.pad_mask,
                    Some(&mut dropout_rng),
                )?);
                batch_labels.push(labels[i]);
            }
            let logits = tape.concat_rows(&rows)?;
            let loss = tape.cross_entropy_logits(logits, &batch_labels)?;
            tape.backward(loss)?;
            let grads = collect_grads(&tape, &binding, state)?;
            opt.step(&mut state.params, &grads)?;
            loss_sum += tape.value(loss).item() as f64 * chunk.len() as f64;
        }
        let metric = match epoch_metric.as_deref_mut() {
            Some(f) => Some(f(state)?),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            loss: loss_sum / data.len() as f64,
            metric,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainReport::build(history, &opt, &state.params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelState, StructuralEncoderConfig, TransformerConfig};
    use crate::signal::HeartbeatSegment;
    use rand::Rng;

    fn tiny_state(seed: u64) -> ModelState {
        let cfg = ModelConfig {
            seg_len: 16,
            classes: 2,
            encoder: StructuralEncoderConfig {
                channels: [4, 4, 4, 4, 4, 8],
                kernel_size: 5,
                stride: 2,
                embed_dim: 8,
            },
            transformer: TransformerConfig {
                num_layers: 1,
                num_heads: 2,
                model_dim: 8,
                ffn_dim: 16,
                dropout: 0.1,
            },
        };
        ModelState::init(cfg, seed).unwrap()
    }

    /// Class 0 ramps up, class 1 ramps down, small per-beat jitter.
    fn toy_corpus(records: usize, beats: usize, seed: u64) -> Vec<SegmentSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..records)
            .map(|r| {
                let label = r % 2;
                let segments: Vec<HeartbeatSegment> = (0..beats)
                    .map(|_| {
                        let values: Vec<f64> = (0..16)
                            .map(|i| {
                                let base = i as f64 / 15.0;
                                let v = if label == 0 { base } else { 1.0 - base };
                                (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)
                            })
                            .collect();
                        HeartbeatSegment {
                            values,
                            peak_index: 7,
                            pre_len: 7,
                            post_len: 8,
                            degenerate: false,
                        }
                    })
                    .collect();
                SegmentSequence {
                    pad_mask: vec![true; segments.len()],
                    segments,
                    record_id: format!("toy{r:02}"),
                    label: Some(label),
                }
            })
            .collect()
    }

    #[test]
    fn autoencoder_pretraining_reduces_reconstruction_loss() {
        let mut state = tiny_state(1);
        let data = toy_corpus(4, 6, 10);
        let before = autoencoder_loss(&state, &data).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr: 3e-3,
            mask_fraction: 0.1,
            seed: 5,
        };
        let report = pretrain_autoencoder(&mut state, &data, &cfg).unwrap();
        let after = autoencoder_loss(&state, &data).unwrap();
        assert_eq!(report.history.len(), 30, "one record per epoch");
        assert!(
            after < before,
            "training should reduce the loss: {before} -> {after}"
        );
        assert!(
            report.history.iter().all(|r| r.loss.is_finite()),
            "losses must stay finite"
        );
    }

    #[test]
    fn masked_pretraining_runs_and_improves_masked_loss() {
        let mut state = tiny_state(2);
        let data = toy_corpus(6, 8, 11);
        let probe = TrainConfig {
            epochs: 1,
            batch_size: 4,
            lr: 1e-3,
            mask_fraction: 0.25,
            seed: 9,
        };
        let before = masked_loss(&state, &data, &probe).unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            ..probe.clone()
        };
        let report = pretrain_masked(&mut state, &data, &cfg).unwrap();
        let after = masked_loss(&state, &data, &probe).unwrap();
        assert_eq!(report.history.len(), 20, "history covers every epoch");
        assert!(
            after < before,
            "masked reconstruction should improve: {before} -> {after}"
        );
    }

    #[test]
    fn finetuning_learns_a_separable_toy_problem() {
        let mut state = tiny_state(3);
        let data = toy_corpus(8, 5, 12);
        let cfg = TrainConfig {
            epochs: 120,
            batch_size: 4,
            lr: 2e-3,
            mask_fraction: 0.1,
            seed: 13,
        };
        let report = finetune(&mut state, &data, &cfg, None).unwrap();
        let preds = crate::model::predict(&state, &data).unwrap();
        let correct = preds
            .iter()
            .zip(&data)
            .filter(|(p, s)| **p == s.label.unwrap())
            .count();
        assert!(
            correct == data.len(),
            "ramp-up vs ramp-down should be fully learnable, got {correct}/{}",
            data.len()
        );
        assert!(
            report.final_loss() < report.history[0].loss,
            "loss should fall over training"
        );
    }

    #[test]
    fn same_seed_training_is_bitwise_reproducible() {
        let data = toy_corpus(4, 5, 14);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            lr: 1e-3,
            mask_fraction: 0.2,
            seed: 21,
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut state = tiny_state(4);
            pretrain_autoencoder(&mut state, &data, &cfg).unwrap();
            pretrain_masked(&mut state, &data, &cfg).unwrap();
            let report = finetune(&mut state, &data, &cfg, None).unwrap();
            runs.push((report, state));
        }
        let (ra, sa) = &runs[0];
        let (rb, sb) = &runs[1];
        for (x, y) in ra.history.iter().zip(&rb.history) {
            assert_eq!(x.loss, y.loss, "epoch {} loss must match bitwise", x.epoch);
        }
        for (name, t) in sa.params.iter() {
            assert_eq!(
                t.data(),
                sb.params.get(name).unwrap().data(),
                "parameter {name} must match bitwise across identical runs"
            );
        }
    }

    #[test]
    fn finetune_rejects_unlabeled_and_out_of_range_records() {
        let mut state = tiny_state(5);
        let mut data = toy_corpus(2, 4, 15);
        data[1].label = None;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            lr: 1e-3,
            mask_fraction: 0.1,
            seed: 1,
        };
        assert!(
            finetune(&mut state, &data, &cfg, None).is_err(),
            "unlabeled record must be rejected"
        );
        let mut data = toy_corpus(2, 4, 16);
        data[0].label = Some(7);
        assert!(
            finetune(&mut state, &data, &cfg, None).is_err(),
            "label beyond the class count must be rejected"
        );
    }

    #[test]
    fn epoch_metric_callback_lands_in_history() {
        let mut state = tiny_state(6);
        let data = toy_corpus(4, 4, 17);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            lr: 1e-3,
            mask_fraction: 0.1,
            seed: 2,
        };
        let mut calls = 0;
        let mut metric = |_: &ModelState| {
            calls += 1;
            Ok(calls as f64)
        };
        let report = finetune(&mut state, &data, &cfg, Some(&mut metric)).unwrap();
        assert_eq!(
            report.history.iter().filter_map(|r| r.metric).collect::<Vec<_>>(),
            vec![1.0, 2.0],
            "metric callback output must appear per epoch"
        );
        assert_eq!(report.best_epoch, 2, "best epoch follows the highest metric");
        // decoder weights see no gradient during fine-tuning, so they carry
        // no moments; everything that was updated must
        assert!(
            !report.final_moments.is_empty(),
            "updated parameters must carry optimizer moments"
        );
        for (name, m, v) in &report.final_moments {
            let p = state.params.get(name).unwrap();
            assert_eq!(m.len(), p.data().len(), "m buffer matches {name}");
            assert_eq!(v.len(), p.data().len(), "v buffer matches {name}");
            assert!(!name.starts_with("dec."), "decoder is untouched by fine-tuning");
        }
    }

    #[test]
    fn best_epoch_rules() {
        let mut state = tiny_state(7);
        let data = toy_corpus(4, 4, 18);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            lr: 1e-3,
            mask_fraction: 0.1,
            seed: 3,
        };
        let report = finetune(&mut state, &data, &cfg, None).unwrap();
        assert_eq!(
            report.best_epoch, 3,
            "without a metric the last epoch is retained"
        );

        let mut state = tiny_state(7);
        let scores = [0.5, 0.9, 0.9];
        let mut i = 0;
        let mut metric = |_: &ModelState| {
            i += 1;
            Ok(scores[i - 1])
        };
        let report = finetune(&mut state, &data, &cfg, Some(&mut metric)).unwrap();
        assert_eq!(report.best_epoch, 2, "metric ties resolve to the earlier epoch");
    }
}
