//! Resolved run configuration: built-in defaults, overridden by an optional
//! line-oriented `key=value` config file, overridden by command flags.
//! Unknown keys are rejected, and every run writes the fully resolved set
//! back out as `run-config.txt` so artifacts carry their own provenance.

use ecgsl_core::error::{Error, Result};
use ecgsl_core::io::SynthConfig;
use ecgsl_core::model::{ModelConfig, StructuralEncoderConfig, TransformerConfig};
use ecgsl_core::signal::{PadMode, SegmentationConfig};
use ecgsl_core::train::TrainConfig;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Which training stage a [`TrainConfig`] is being resolved for; epochs and
/// learning rate default differently per stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrainStage {
    PretrainAe,
    PretrainMask,
    Finetune,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // synthesis
    pub records: usize,
    pub classes: usize,
    pub duration: f64,
    pub snr: f64,
    pub hr_range: (f64, f64),
    pub rr_jitter: f64,
    pub t_amp_delta: f64,
    pub rr_scale_delta: f64,
    // conditioning and segmentation
    pub segment_len: usize,
    pub pad_mode: PadMode,
    pub pre_fraction: f64,
    pub post_fraction: f64,
    pub target_fs: f64,
    pub highpass_hz: f64,
    pub powerline_hz: f64,
    pub workers: usize,
    // model
    pub enc_channels: [usize; 6],
    pub kernel_size: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    // training; per-stage defaults fill the `None`s
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: usize,
    pub mask_fraction: f64,
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            records: 100,
            classes: 3,
            duration: 60.0,
            snr: f64::INFINITY,
            hr_range: (60.0, 100.0),
            rr_jitter: 0.05,
            t_amp_delta: 0.35,
            rr_scale_delta: 0.25,
            segment_len: 100,
            pad_mode: PadMode::Edge,
            pre_fraction: 0.35,
            post_fraction: 0.45,
            target_fs: 100.0,
            highpass_hz: 0.5,
            powerline_hz: 50.0,
            workers: 0,
            enc_channels: [16, 32, 32, 64, 64, 128],
            kernel_size: 5,
            embed_dim: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.1,
            epochs: None,
            lr: None,
            batch_size: 64,
            mask_fraction: 0.1,
            val_fraction: 0.0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value '{value}' for key '{key}'")))
}

impl RunConfig {
    /// Defaults plus an optional config file.
    pub fn load(config: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = config {
            cfg.apply_file(path)?;
        }
        Ok(cfg)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{}:{}: expected key=value, got '{line}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Schema-checked assignment of one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = num(key, value)?,
            "records" => self.records = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "duration" => self.duration = num(key, value)?,
            "snr" => self.snr = num(key, value)?,
            "hr-range" => {
                let (lo, hi) = value.split_once(':').ok_or_else(|| {
                    Error::InvalidConfig(format!("hr-range wants LO:HI, got '{value}'"))
                })?;
                self.hr_range = (num(key, lo)?, num(key, hi)?);
            }
            "rr-jitter" => self.rr_jitter = num(key, value)?,
            "t-amp-delta" => self.t_amp_delta = num(key, value)?,
            "rr-scale-delta" => self.rr_scale_delta = num(key, value)?,
            "segment-len" => self.segment_len = num(key, value)?,
            "pad-mode" => self.pad_mode = PadMode::parse(value)?,
            "pre-fraction" => self.pre_fraction = num(key, value)?,
            "post-fraction" => self.post_fraction = num(key, value)?,
            "target-fs" => self.target_fs = num(key, value)?,
            "highpass-hz" => self.highpass_hz = num(key, value)?,
            "powerline-hz" => self.powerline_hz = num(key, value)?,
            "workers" => self.workers = num(key, value)?,
            "enc-channels" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 6 {
                    return Err(Error::InvalidConfig(format!(
                        "enc-channels wants 6 comma-separated sizes, got {}",
                        parts.len()
                    )));
                }
                for (i, p) in parts.iter().enumerate() {
                    self.enc_channels[i] = num(key, p.trim())?;
                }
            }
            "kernel-size" => self.kernel_size = num(key, value)?,
            "embed-dim" => self.embed_dim = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ffn-dim" => self.ffn_dim = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "epochs" => self.epochs = Some(num(key, value)?),
            "lr" => self.lr = Some(num(key, value)?),
            "batch-size" => self.batch_size = num(key, value)?,
            "mask-fraction" => self.mask_fraction = num(key, value)?,
            "val-fraction" => self.val_fraction = num(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Full resolved key set, parseable by [`RunConfig::apply_file`].
    pub fn snapshot(&self) -> String {
        let mut pairs: BTreeMap<&str, String> = BTreeMap::new();
        pairs.insert("seed", self.seed.to_string());
        pairs.insert("records", self.records.to_string());
        pairs.insert("classes", self.classes.to_string());
        pairs.insert("duration", self.duration.to_string());
        pairs.insert("snr", self.snr.to_string());
        pairs.insert("hr-range", format!("{}:{}", self.hr_range.0, self.hr_range.1));
        pairs.insert("rr-jitter", self.rr_jitter.to_string());
        pairs.insert("t-amp-delta", self.t_amp_delta.to_string());
        pairs.insert("rr-scale-delta", self.rr_scale_delta.to_string());
        pairs.insert("segment-len", self.segment_len.to_string());
        pairs.insert("pad-mode", self.pad_mode.name().to_string());
        pairs.insert("pre-fraction", self.pre_fraction.to_string());
        pairs.insert("post-fraction", self.post_fraction.to_string());
        pairs.insert("target-fs", self.target_fs.to_string());
        pairs.insert("highpass-hz", self.highpass_hz.to_string());
        pairs.insert("powerline-hz", self.powerline_hz.to_string());
        pairs.insert("workers", self.workers.to_string());
        pairs.insert(
            "enc-channels",
            self.enc_channels.map(|c| c.to_string()).join(","),
        );
        pairs.insert("kernel-size", self.kernel_size.to_string());
        pairs.insert("embed-dim", self.embed_dim.to_string());
        pairs.insert("layers", self.layers.to_string());
        pairs.insert("heads", self.heads.to_string());
        pairs.insert("ffn-dim", self.ffn_dim.to_string());
        pairs.insert("dropout", self.dropout.to_string());
        if let Some(e) = self.epochs {
            pairs.insert("epochs", e.to_string());
        }
        if let Some(lr) = self.lr {
            pairs.insert("lr", lr.to_string());
        }
        pairs.insert("batch-size", self.batch_size.to_string());
        pairs.insert("mask-fraction", self.mask_fraction.to_string());
        pairs.insert("val-fraction", self.val_fraction.to_string());

        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_records: self.records,
            duration_secs: self.duration,
            fs: self.target_fs,
            hr_range: self.hr_range,
            rr_jitter: self.rr_jitter,
            snr_db: self.snr,
            classes: self.classes,
            t_amp_delta: self.t_amp_delta,
            rr_scale_delta: self.rr_scale_delta,
            seed: self.seed,
        }
    }

    pub fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig {
            seg_len: self.segment_len,
            pre_fraction: self.pre_fraction,
            post_fraction: self.post_fraction,
            pad_mode: self.pad_mode,
            target_fs: self.target_fs,
        }
    }

    /// Model layout. `seg_len` comes from the corpus being trained on, not
    /// from the config file, so a model always fits its data.
    pub fn model_config(&self, seg_len: usize) -> ModelConfig {
        ModelConfig {
            seg_len,
            classes: self.classes,
            encoder: StructuralEncoderConfig {
                channels: self.enc_channels,
                kernel_size: self.kernel_size,
                stride: 2,
                embed_dim: self.embed_dim,
            },
            transformer: TransformerConfig {
                num_layers: self.layers,
                num_heads: self.heads,
                model_dim: self.embed_dim,
                ffn_dim: self.ffn_dim,
                dropout: self.dropout,
            },
        }
    }

    pub fn train_config(&self, stage: TrainStage) -> TrainConfig {
        let (default_epochs, default_lr) = match stage {
            TrainStage::PretrainAe | TrainStage::PretrainMask => (20, 1e-4),
            TrainStage::Finetune => (40, 5e-4),
        };
        TrainConfig {
            epochs: self.epochs.unwrap_or(default_epochs),
            batch_size: self.batch_size,
            lr: self.lr.unwrap_or(default_lr),
            mask_fraction: self.mask_fraction,
            seed: self.seed,
        }
    }
}

/// Deterministic per-class split: shuffle each class's indices and hold
/// out `round(fraction * count)` of them (at least 1, never all) for
/// validation. Returns `(train, validation)` index lists.
pub fn stratified_split(
    labels: &[usize],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "validation fraction must be in [0, 1), got {fraction}"
        )));
    }
    if fraction == 0.0 {
        return Ok(((0..labels.len()).collect(), Vec::new()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut idx) in by_class {
        if idx.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "class {class} has {} record(s); validation needs at least 2",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let take = ((fraction * idx.len() as f64).round() as usize)
            .max(1)
            .min(idx.len() - 1);
        val.extend_from_slice(&idx[..take]);
        train.extend_from_slice(&idx[take..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}
